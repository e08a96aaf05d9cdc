// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_TRAINING_TRAINER_HPP_
#define DEPTHRNN_TRAINING_TRAINER_HPP_

#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "depthrnn/backbone/backbone.hpp"
#include "depthrnn/depth/hallurnn.hpp"
#include "depthrnn/eval/dataset.hpp"

namespace depthrnn::training {

enum class OptimizerKind { kSgd, kAdam };
enum class LossMask { kAnswerTokensOnly, kAllTokens };

struct TrainConfig {
  double learning_rate = 1e-5;
  std::size_t batch_size = 10;
  std::size_t epochs = 3;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  LossMask loss_mask = LossMask::kAnswerTokensOnly;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  // Rate may be zero; batch size must be positive. Throws ConfigError.
  void validate() const;
};

// A token sequence for next-token training. Position t predicts token t+1;
// predictions of tokens at index >= answer_begin are answer targets.
struct TrainingSequence {
  std::vector<std::size_t> tokens;
  std::size_t answer_begin = 0;

  std::span<const std::size_t> inputs() const {
    return std::span<const std::size_t>(tokens).first(tokens.size() - 1);
  }
};

TrainingSequence to_sequence(const eval::SceneQAExample& example, const eval::Vocabulary& vocab);
std::vector<TrainingSequence> to_sequences(const std::vector<eval::SceneQAExample>& data,
                                           const eval::Vocabulary& vocab);

// One target per input position; masked positions hold -1.
std::vector<int> targets_for(const TrainingSequence& seq, LossMask mask);

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
};

struct TrainRecord {
  std::vector<StepRecord> steps;
  std::string backbone_sha_before;
  std::string backbone_sha_after;

  // Columns: step,epoch,loss,grad_norm.
  void write_csv(std::ostream& out) const;
};

// SGD or Adam over a fixed parameter list, reading Parameter::grad.
class Optimizer {
 public:
  Optimizer(const TrainConfig& config, std::vector<Parameter*> params);
  void step();
  std::size_t steps_taken() const { return t_; }

 private:
  TrainConfig config_;
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

// Mean cross-entropy of the recurrence logits over unmasked targets.
Var recurrence_loss(std::span<const std::size_t> inputs, std::span<const int> targets,
                    const backbone::BoundBackbone& w, const depth::BoundCell& cell);

// Trains every backbone tensor on next-token cross-entropy, then freezes.
// Throws NumericError (with seed and step) if the loss stops being finite.
backbone::BackboneWeights pretrain_backbone(const std::vector<TrainingSequence>& corpus,
                                            const backbone::BackboneConfig& model,
                                            const TrainConfig& config,
                                            TrainRecord* record = nullptr);

// Optimizes the cell parameters of `mode` only, through the depth recurrence
// over the frozen backbone. Throws ContractError if the backbone is not
// frozen or the mode has nothing to train, ConfigError on a width mismatch,
// IntegrityError if a backbone tensor acquires a gradient or its checkpoint
// hash changes.
TrainRecord finetune_cell(const backbone::BackboneWeights& backbone, depth::CellMode& mode,
                          const std::vector<TrainingSequence>& data, const TrainConfig& config);

// Rescales W_e2 so that the mean correction-gate activation over `sample`
// approaches `target` (e.g. sigmoid(2) ~ 0.88). Only meaningful for
// variants with a correction gate; others are left untouched.
void calibrate_correction_gate(depth::CellMode& mode, const backbone::BackboneWeights& backbone,
                               const std::vector<TrainingSequence>& sample, double target);

double mean_correction_gate(const depth::CellMode& mode, const backbone::BackboneWeights& backbone,
                            const std::vector<TrainingSequence>& sample);

}  // namespace depthrnn::training

#endif  // DEPTHRNN_TRAINING_TRAINER_HPP_
