// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_IO_CHECKPOINT_HPP_
#define DEPTHRNN_IO_CHECKPOINT_HPP_

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "depthrnn/numerics/tensor.hpp"

// Parameter checkpoints.
//
//   bytes [0, 8)        header length L, unsigned 64-bit little-endian
//   bytes [8, 8 + L)    UTF-8 JSON header
//   bytes [8 + L, ...)  tensor payload, float64 little-endian, row-major
//
// The header is
//   {"format": "depthrnn-params", "version": 1,
//    "metadata": {string: string, ...},
//    "tensors": [{"name", "shape", "offset", "nbytes"}, ...]}
// with offsets relative to the start of the payload. Serialization is
// deterministic: identical parameters produce identical bytes.
namespace depthrnn::io {

using Metadata = std::map<std::string, std::string>;

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  Metadata metadata;
  std::vector<NamedTensor> tensors;

  const Tensor& find(std::string_view name) const;
};

std::string serialize(std::span<const Parameter* const> params,
                      const Metadata& metadata = {});
Checkpoint deserialize(std::string_view bytes);

void save(const std::filesystem::path& path,
          std::span<const Parameter* const> params,
          const Metadata& metadata = {});
Checkpoint load(const std::filesystem::path& path);

// Copies checkpoint tensors into `params` by name. Throws ConfigError when a
// name is missing or a shape disagrees.
void assign(const Checkpoint& ckpt, std::span<Parameter* const> params);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace depthrnn::io

#endif  // DEPTHRNN_IO_CHECKPOINT_HPP_
