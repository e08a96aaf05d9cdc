// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "depthrnn/errors.hpp"

namespace depthrnn {
namespace {

double evaluate(const LossBuilder& loss) {
  Tape tape;
  const double v = loss(tape).value().item();
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}

// Ridders' method: a Neville tableau over central differences with
// geometrically shrinking steps. The tableau error ignores roundoff and kinks,
// so each row is also charged kRoundoff * |f| / h plus a kink term. With
// bend(h) = |f(h) + f(-h) - 2 f0| / h, a smooth f gives bend ~ f'' h, which
// shrinks by kCon per row; a ReLU kink inside the step keeps bend near |f'|.
// The part of bend that fails to shrink is charged.
struct Estimate {
  double value = 0.0;
  double error = 0.0;
};

Estimate ridders(const std::function<double(double)>& at, double f0, double h0) {
  constexpr int kTab = 10;
  constexpr double kCon = 1.4, kCon2 = kCon * kCon, kSafe = 2.0;
  constexpr double kRoundoff = 8.0 * std::numeric_limits<double>::epsilon();
  double a[kTab][kTab];
  double h = h0;
  double bend = 0.0;
  double penalty = 0.0;
  auto central = [&](double step) {
    const double up = at(step), down = at(-step);
    const double prev = bend;
    bend = std::abs(up + down - 2.0 * f0) / step;
    penalty = kRoundoff * std::max(std::abs(up), std::abs(down)) / step +
              std::max(0.0, bend - prev / kCon);
    return (up - down) / (2.0 * step);
  };
  a[0][0] = central(h);
  double best = a[0][0];
  double err = std::numeric_limits<double>::max();
  for (int i = 1; i < kTab; ++i) {
    h /= kCon;
    a[0][i] = central(h);
    double fac = kCon2;
    for (int j = 1; j <= i; ++j) {
      a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
      fac *= kCon2;
      const double errt = std::max(std::abs(a[j][i] - a[j - 1][i]),
                                   std::abs(a[j][i] - a[j - 1][i - 1])) + penalty;
      if (errt <= err) {
        err = errt;
        best = a[j][i];
      }
    }
    if (std::abs(a[i][i] - a[i - 1][i - 1]) >= kSafe * err) break;
  }
  return {best, err};
}

// Ridders started from h0 * 10^(-k/2), k = 0..10; the estimate with the
// smallest error bound wins. Large steps beat roundoff on smooth coordinates,
// small ones stay clear of nearby ReLU kinks. Later starts are skipped once
// the bound is below kEnough of the magnitude (or of `floor`).
double ridders_multi(const std::function<double(double)>& at, double h0, double floor) {
  constexpr double kEnough = 1e-9;
  constexpr int kStarts = 11;
  const double f0 = at(0.0);
  Estimate best = ridders(at, f0, h0);
  for (int k = 1; k < kStarts; ++k) {
    if (best.error <= kEnough * std::max(std::abs(best.value), floor)) break;
    const Estimate e = ridders(at, f0, h0 * std::pow(10.0, -0.5 * k));
    if (e.error < best.error) best = e;
  }
  return best.value;
}

}  // namespace

GradCheckResult grad_check(const LossBuilder& loss, const std::vector<Parameter*>& params,
                           const GradCheckOptions& options) {
  if (options.stencil != 0 && options.stencil != 2 && options.stencil != 4) {
    throw ContractError("grad_check: stencil must be 0, 2 or 4");
  }
  const double h = options.step;
  for (Parameter* p : params) {
    if (!p->value.all_finite()) {
      throw NumericError("grad_check: parameter '" + p->name + "' is not finite");
    }
    p->zero_grad();
  }
  {
    Tape tape;
    Var l = loss(tape);
    if (!std::isfinite(l.value().item())) {
      throw NumericError("grad_check: loss is not finite");
    }
    tape.backward(l);
  }

  // Probes only need forward values; recording the parameters as constants
  // keeps the tape free of backward closures.
  std::vector<bool> trainable;
  for (Parameter* p : params) {
    trainable.push_back(p->requires_grad);
    p->requires_grad = false;
  }
  struct Restore {
    const std::vector<Parameter*>& params;
    const std::vector<bool>& flags;
    ~Restore() {
      for (std::size_t k = 0; k < params.size(); ++k) params[k]->requires_grad = flags[k];
    }
  } restore{params, trainable};

  GradCheckResult result;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double original = p->value[i];
      auto at = [&](double offset) {
        p->value[i] = original + offset;
        return evaluate(loss);
      };
      double numeric;
      if (options.stencil == 0) {
        numeric = ridders_multi(at, h, options.floor);
      } else if (options.stencil == 2) {
        numeric = (at(h) - at(-h)) / (2.0 * h);
      } else {
        numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
      }
      p->value[i] = original;

      const double analytic = p->grad[i];
      const double err = std::abs(analytic - numeric) /
                         std::max(options.floor, std::abs(analytic) + std::abs(numeric));
      ++result.coordinates;
      if (err > result.max_rel_error || result.worst_parameter.empty()) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        result.worst_parameter = p->name;
        result.worst_index = i;
        result.worst_analytic = analytic;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace depthrnn
