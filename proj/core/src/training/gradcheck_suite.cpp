// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/training/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "json.hpp"

#include "depthrnn/backbone/backbone.hpp"
#include "depthrnn/cells/cells.hpp"
#include "depthrnn/depth/hallurnn.hpp"
#include "depthrnn/training/trainer.hpp"

namespace depthrnn::training {
namespace {

constexpr std::size_t kRows = 3;

// Random linear functional of `x`, so every output coordinate matters.
Var project(Var x, const Tensor& r) { return ops::sum(x * x.tape()->constant_ref(r)); }

struct Instance {
  Parameter m, v, c;
  Tensor r1, r2;
};

Instance draw_instance(std::size_t d, Rng& rng) {
  Instance in;
  in.m = Parameter("m", normal_tensor({kRows, d}, 1.0, rng));
  in.v = Parameter("v", normal_tensor({kRows, d}, 1.0, rng));
  in.c = Parameter("c_tilde", normal_tensor({kRows, d}, 1.0, rng));
  in.r1 = normal_tensor({kRows, d}, 1.0, rng);
  in.r2 = normal_tensor({kRows, d}, 1.0, rng);
  return in;
}

using TargetFn = std::function<GradCheckResult(std::size_t d, Rng& rng, const GradCheckOptions& opt)>;

GradCheckResult check_constraint(std::size_t d, Rng& rng, const GradCheckOptions& opt) {
  cells::DgDpuParams p = cells::DgDpuParams::init(d, rng);
  Instance in = draw_instance(d, rng);
  auto loss = [&](Tape& t) {
    cells::BoundDgDpu b = cells::bind(t, p);
    cells::ConstraintResult r = cells::constraint_gate(t.parameter(in.m), t.parameter(in.v), b);
    return project(r.c_tilde, in.r1) + project(r.g_a, in.r2);
  };
  return grad_check(loss, {&p.w_a, &in.m, &in.v}, opt);
}

GradCheckResult check_correction(std::size_t d, Rng& rng, const GradCheckOptions& opt) {
  cells::DgDpuParams p = cells::DgDpuParams::init(d, rng);
  Instance in = draw_instance(d, rng);
  const Tensor r_gate = normal_tensor({kRows, 1}, 1.0, rng);
  auto loss = [&](Tape& t) {
    cells::BoundDgDpu b = cells::bind(t, p);
    cells::CorrectionResult r =
        cells::correction_gate(t.parameter(in.m), t.parameter(in.v), t.parameter(in.c), b);
    return project(r.v_next, in.r1) + project(r.g_e, r_gate);
  };
  return grad_check(loss, {&p.w_e1, &p.w_e2, &in.m, &in.v, &in.c}, opt);
}

GradCheckResult check_dgdpu(std::size_t d, Rng& rng, const GradCheckOptions& opt) {
  cells::DgDpuParams p = cells::DgDpuParams::init(d, rng);
  Instance in = draw_instance(d, rng);
  auto loss = [&](Tape& t) {
    cells::BoundDgDpu b = cells::bind(t, p);
    return project(cells::dgdpu_step(t.parameter(in.m), t.parameter(in.v), b).v_next, in.r1);
  };
  std::vector<Parameter*> params = p.parameters();
  params.push_back(&in.m);
  params.push_back(&in.v);
  return grad_check(loss, params, opt);
}

GradCheckResult check_gru(std::size_t d, Rng& rng, const GradCheckOptions& opt) {
  cells::GruParams p = cells::GruParams::init(d, rng);
  // Non-zero biases so their gradients are exercised away from the init.
  for (Parameter* b : {&p.b_z, &p.b_r, &p.b_h}) b->value = normal_tensor({d}, 0.5, rng);
  Instance in = draw_instance(d, rng);
  auto loss = [&](Tape& t) {
    cells::BoundGru b = cells::bind(t, p);
    return project(cells::gru_step(t.parameter(in.m), t.parameter(in.v), b), in.r1);
  };
  std::vector<Parameter*> params = p.parameters();
  params.push_back(&in.m);
  params.push_back(&in.v);
  return grad_check(loss, params, opt);
}

GradCheckResult check_recurrence(std::size_t d, Rng& rng, const GradCheckOptions& opt) {
  backbone::BackboneConfig cfg;
  cfg.n_layers = 3;
  cfg.d_model = d;
  cfg.n_heads = d >= 4 ? 2 : 1;
  cfg.vocab = 7;
  cfg.max_seq = 6;
  cfg.ff_mult = 2;
  backbone::BackboneWeights w = backbone::BackboneWeights::init(cfg, rng);
  depth::CellMode mode = depth::CellMode::create(depth::CellVariant::kDgDpu, d, rng);

  TrainingSequence seq;
  for (std::size_t i = 0; i < 5; ++i) seq.tokens.push_back(rng.below(cfg.vocab));
  seq.answer_begin = 1;
  const std::vector<int> targets = targets_for(seq, LossMask::kAllTokens);

  auto loss = [&](Tape& t) {
    backbone::BoundBackbone bw = backbone::bind(t, w);
    std::unique_ptr<depth::BoundCell> cell = depth::bind(t, mode);
    return recurrence_loss(seq.inputs(), targets, bw, *cell);
  };
  w.freeze();
  return grad_check(loss, mode.parameters(), opt);
}

nlohmann::ordered_json result_json(const GradcheckTarget& t) {
  nlohmann::ordered_json j;
  j["name"] = t.name;
  j["instances"] = t.instances;
  j["coordinates"] = t.coordinates;
  j["max_rel_error"] = t.max_rel_error;
  j["worst"] = {{"d", t.worst_dim},
                {"parameter", t.worst.worst_parameter},
                {"index", t.worst.worst_index},
                {"analytic", t.worst.worst_analytic},
                {"numeric", t.worst.worst_numeric}};
  return j;
}

}  // namespace

double GradcheckReport::max_rel_error() const {
  double e = 0.0;
  for (const GradcheckTarget& t : targets) e = std::max(e, t.max_rel_error);
  return e;
}

std::string GradcheckReport::to_json() const {
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["tolerance"] = tolerance;
  j["max_rel_error"] = max_rel_error();
  j["passed"] = passed();
  j["targets"] = nlohmann::ordered_json::array();
  for (const GradcheckTarget& t : targets) j["targets"].push_back(result_json(t));
  return j.dump(2) + "\n";
}

GradcheckReport run_gradcheck_suite(std::uint64_t seed, const GradcheckOptions& options) {
  const std::pair<const char*, TargetFn> table[] = {
      {"constraint_gate", check_constraint}, {"correction_gate", check_correction},
      {"dgdpu_step", check_dgdpu},           {"gru_step", check_gru},
      {"recurrence_n3", check_recurrence},
  };
  GradcheckReport report;
  report.seed = seed;
  report.tolerance = options.tolerance;
  for (const auto& [name, fn] : table) {
    GradcheckTarget target;
    target.name = name;
    for (std::size_t d : options.dims) {
      Rng rng(mix_seed(seed, std::string(name) + "/" + std::to_string(d)));
      for (std::size_t i = 0; i < options.instances; ++i) {
        GradCheckResult r = fn(d, rng, options.check);
        ++target.instances;
        target.coordinates += r.coordinates;
        if (target.instances == 1 || r.max_rel_error > target.max_rel_error) {
          target.max_rel_error = r.max_rel_error;
          target.worst = r;
          target.worst_dim = d;
        }
      }
    }
    report.targets.push_back(std::move(target));
  }
  return report;
}

}  // namespace depthrnn::training
