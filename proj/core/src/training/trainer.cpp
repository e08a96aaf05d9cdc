// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/training/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "depthrnn/errors.hpp"
#include "depthrnn/io/format.hpp"
#include "depthrnn/parallel.hpp"

namespace depthrnn::training {
namespace {

struct ExampleGrad {
  double loss = 0.0;
  std::vector<Tensor> grads;
};

// Builds a loss on `tape` and returns the leaves whose gradients are wanted.
using ExampleLoss =
    std::function<Var(Tape& tape, const TrainingSequence& seq, std::vector<Var>& leaves)>;

double global_norm(const std::vector<Parameter*>& params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (double g : p->grad.values()) sq += g * g;
  }
  return std::sqrt(sq);
}

std::vector<std::size_t> epoch_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Fisher-Yates with the project generator so the order is platform independent.
  for (std::size_t i = n; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

// Runs the full loop. Gradients of each batch are computed per example in
// parallel and summed in example order, so results do not depend on the
// number of workers.
void run_loop(const std::vector<TrainingSequence>& data, const TrainConfig& config,
              std::vector<Parameter*> params, const ExampleLoss& example_loss,
              TrainRecord& record) {
  if (data.empty()) throw ContractError("training data is empty");
  Optimizer opt(config, params);
  Rng rng(mix_seed(config.seed, "shuffle"));
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = epoch_order(data.size(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - begin);
      std::vector<ExampleGrad> per(n);
      parallel_for(n, [&](std::size_t k) {
        Tape tape;
        std::vector<Var> leaves;
        Var loss = example_loss(tape, data[order[begin + k]], leaves);
        tape.backward(loss);
        per[k].loss = loss.value().item();
        per[k].grads.reserve(leaves.size());
        for (const Var& leaf : leaves) per[k].grads.push_back(tape.grad(leaf));
      });

      const double inv = 1.0 / static_cast<double>(n);
      double loss = 0.0;
      for (std::size_t p = 0; p < params.size(); ++p) {
        params[p]->grad = Tensor(params[p]->value.shape(), 0.0);
      }
      for (const ExampleGrad& eg : per) {
        loss += eg.loss;
        for (std::size_t p = 0; p < params.size(); ++p) {
          auto dst = params[p]->grad.values();
          auto src = eg.grads[p].values();
          for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * inv;
        }
      }
      loss *= inv;
      const double norm = global_norm(params);
      if (!std::isfinite(loss) || !std::isfinite(norm)) {
        std::ostringstream msg;
        msg << "training diverged: non-finite loss at step " << step << " (seed " << config.seed
            << ")";
        throw NumericError(msg.str());
      }
      if (config.grad_clip > 0.0 && norm > config.grad_clip) {
        const double s = config.grad_clip / norm;
        for (Parameter* p : params) {
          for (double& g : p->grad.values()) g *= s;
        }
      }
      opt.step();
      for (Parameter* p : params) {
        if (!p->value.all_finite()) {
          std::ostringstream msg;
          msg << "training diverged: non-finite weight " << p->name << " at step " << step
              << " (seed " << config.seed << ")";
          throw NumericError(msg.str());
        }
      }
      record.steps.push_back({step, epoch, loss, norm});
      ++step;
    }
  }
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning_rate must be a finite non-negative number");
  }
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("adam_beta2 must be in [0, 1)");
  if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be non-negative");
}

TrainingSequence to_sequence(const eval::SceneQAExample& example, const eval::Vocabulary& vocab) {
  TrainingSequence seq;
  seq.tokens = example.tokens(vocab);
  seq.answer_begin = seq.tokens.size() - 1;
  return seq;
}

std::vector<TrainingSequence> to_sequences(const std::vector<eval::SceneQAExample>& data,
                                           const eval::Vocabulary& vocab) {
  std::vector<TrainingSequence> out;
  out.reserve(data.size());
  for (const auto& ex : data) out.push_back(to_sequence(ex, vocab));
  return out;
}

std::vector<int> targets_for(const TrainingSequence& seq, LossMask mask) {
  if (seq.tokens.size() < 2) throw ContractError("training sequence needs at least two tokens");
  if (seq.answer_begin == 0 || seq.answer_begin > seq.tokens.size()) {
    throw ContractError("answer_begin out of range");
  }
  std::vector<int> targets(seq.tokens.size() - 1, -1);
  for (std::size_t t = 0; t + 1 < seq.tokens.size(); ++t) {
    if (mask == LossMask::kAllTokens || t + 1 >= seq.answer_begin) {
      targets[t] = static_cast<int>(seq.tokens[t + 1]);
    }
  }
  return targets;
}

void TrainRecord::write_csv(std::ostream& out) const {
  out << "step,epoch,loss,grad_norm\n";
  for (const StepRecord& s : steps) {
    out << s.step << ',' << s.epoch << ',' << io::format_double(s.loss) << ','
        << io::format_double(s.grad_norm) << '\n';
  }
}

Optimizer::Optimizer(const TrainConfig& config, std::vector<Parameter*> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  if (config_.optimizer == OptimizerKind::kAdam) {
    for (const Parameter* p : params_) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }
}

void Optimizer::step() {
  ++t_;
  const double lr = config_.learning_rate;
  if (config_.optimizer == OptimizerKind::kSgd) {
    for (Parameter* p : params_) {
      if (p->grad.empty()) continue;
      auto w = p->value.values();
      auto g = p->grad.values();
      for (std::size_t j = 0; j < w.size(); ++j) w[j] -= lr * g[j];
    }
    return;
  }
  const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter* p = params_[k];
    if (p->grad.empty()) continue;
    auto w = p->value.values();
    auto g = p->grad.values();
    auto m = m_[k].values();
    auto v = v_[k].values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.adam_eps);
    }
  }
}

Var recurrence_loss(std::span<const std::size_t> inputs, std::span<const int> targets,
                    const backbone::BoundBackbone& w, const depth::BoundCell& cell) {
  depth::RecurrenceResult r = depth::hallurnn_logits(inputs, w, cell);
  return ops::masked_cross_entropy(r.logits, targets);
}

backbone::BackboneWeights pretrain_backbone(const std::vector<TrainingSequence>& corpus,
                                            const backbone::BackboneConfig& model,
                                            const TrainConfig& config, TrainRecord* record) {
  model.validate();
  config.validate();
  Rng rng(mix_seed(config.seed, "backbone-init"));
  backbone::BackboneWeights weights = backbone::BackboneWeights::init(model, rng);
  const backbone::BackboneWeights& view = weights;

  TrainRecord local;
  TrainRecord& rec = record != nullptr ? *record : local;
  rec.backbone_sha_before = weights.sha256();
  run_loop(
      corpus, config, weights.parameters(),
      [&](Tape& tape, const TrainingSequence& seq, std::vector<Var>& leaves) {
        backbone::BoundBackbone bound = backbone::bind_leaves(tape, view, leaves);
        const std::vector<int> targets = targets_for(seq, config.loss_mask);
        Var logits = backbone::vanilla_logits(seq.inputs(), bound);
        return ops::masked_cross_entropy(logits, targets);
      },
      rec);
  // Measured before freezing so both hashes cover the same metadata.
  rec.backbone_sha_after = weights.sha256();
  weights.freeze();
  return weights;
}

TrainRecord finetune_cell(const backbone::BackboneWeights& backbone, depth::CellMode& mode,
                          const std::vector<TrainingSequence>& data, const TrainConfig& config) {
  config.validate();
  if (!backbone.frozen()) throw ContractError("finetune requires a frozen backbone");
  if (!depth::is_trainable(mode.variant())) {
    throw ContractError("cell variant " + std::string(depth::variant_name(mode.variant())) +
                        " has no trainable parameters");
  }
  if (mode.dim() != backbone.config().d_model) {
    throw ConfigError("cell width " + std::to_string(mode.dim()) +
                      " does not match backbone d_model " +
                      std::to_string(backbone.config().d_model));
  }

  TrainRecord rec;
  rec.backbone_sha_before = backbone.sha256();
  const depth::CellMode& view = mode;
  run_loop(
      data, config, mode.parameters(),
      [&](Tape& tape, const TrainingSequence& seq, std::vector<Var>& leaves) {
        backbone::BoundBackbone bound = backbone::bind(tape, backbone);
        std::unique_ptr<depth::BoundCell> cell = depth::bind_leaves(tape, view, leaves);
        const std::vector<int> targets = targets_for(seq, config.loss_mask);
        return recurrence_loss(seq.inputs(), targets, bound, *cell);
      },
      rec);
  rec.backbone_sha_after = backbone.sha256();

  for (const Parameter* p : backbone.parameters()) {
    for (double g : p->grad.values()) {
      if (g != 0.0) throw IntegrityError("frozen backbone tensor " + p->name + " received a gradient");
    }
  }
  if (rec.backbone_sha_after != rec.backbone_sha_before) {
    throw IntegrityError("backbone checkpoint hash changed during finetune");
  }
  return rec;
}

double mean_correction_gate(const depth::CellMode& mode, const backbone::BackboneWeights& backbone,
                            const std::vector<TrainingSequence>& sample) {
  double total = 0.0;
  std::size_t count = 0;
  for (const TrainingSequence& seq : sample) {
    Tape tape;
    backbone::BoundBackbone bound = backbone::bind(tape, backbone);
    std::unique_ptr<depth::BoundCell> cell = depth::bind(tape, mode);
    depth::RecurrenceResult r = depth::hallurnn_logits(seq.inputs(), bound, *cell);
    for (const cells::StepResult& s : r.steps) {
      if (!s.g_e.valid()) continue;
      for (double g : s.g_e.value().values()) {
        total += g;
        ++count;
      }
    }
  }
  return count == 0 ? 1.0 : total / static_cast<double>(count);
}

void calibrate_correction_gate(depth::CellMode& mode, const backbone::BackboneWeights& backbone,
                               const std::vector<TrainingSequence>& sample, double target) {
  const depth::CellVariant v = mode.variant();
  if (v != depth::CellVariant::kDgDpu && v != depth::CellVariant::kCorrectionOnly) return;
  if (!(target > 0.5 && target < 1.0)) throw ContractError("calibration target must be in (0.5, 1)");
  if (sample.empty()) return;

  Parameter& w_e2 = mode.dgdpu().w_e2;
  const Tensor base = w_e2.value;
  auto apply = [&](double s) {
    for (std::size_t j = 0; j < base.size(); ++j) w_e2.value[j] = base[j] * s;
  };
  // The gate grows with the scale; bisect in log space.
  double lo = -12.0, hi = 12.0;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    apply(std::exp(mid));
    if (mean_correction_gate(mode, backbone, sample) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  apply(std::exp(0.5 * (lo + hi)));
}

}  // namespace depthrnn::training
