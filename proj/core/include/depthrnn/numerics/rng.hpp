// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_NUMERICS_RNG_HPP_
#define DEPTHRNN_NUMERICS_RNG_HPP_

#include <cstdint>
#include <random>
#include <string_view>

#include "depthrnn/numerics/tensor.hpp"

namespace depthrnn {

// Seeded generator passed explicitly to every random operation. Draws are
// derived from raw 64-bit outputs so sequences do not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, n). n must be positive.
  std::size_t below(std::size_t n);
  double normal();

  // Independent child stream keyed by a label.
  Rng fork(std::string_view label);

 private:
  std::mt19937_64 engine_;
};

// splitmix64 finalizer; also used to derive per-purpose seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::string_view label);

Tensor uniform_tensor(Shape shape, double lo, double hi, Rng& rng);
Tensor normal_tensor(Shape shape, double stddev, Rng& rng);
// Glorot/Xavier uniform for a [fan_in x fan_out] matrix.
Tensor xavier_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace depthrnn

#endif  // DEPTHRNN_NUMERICS_RNG_HPP_
