// SPDX-License-Identifier: Apache-2.0
#include "depthrnn/cli/pipeline.hpp"

#include <algorithm>

namespace depthrnn::cli {

Datasets make_datasets(const RunConfig& config) {
  Datasets d;
  d.vocab = config.vocabulary();
  d.pretrain = eval::generate_dataset(config.dataset_spec("pretrain"));
  d.finetune = eval::generate_dataset(config.dataset_spec("finetune"));
  d.eval = eval::generate_dataset(config.dataset_spec("eval"));
  return d;
}

backbone::BackboneWeights run_pretrain(const RunConfig& config, const Datasets& data,
                                       training::TrainRecord* record) {
  training::TrainConfig t = config.pretrain;
  t.seed = config.derived_seed("pretrain");
  return training::pretrain_backbone(training::to_sequences(data.pretrain, data.vocab),
                                     config.model(), t, record);
}

depth::CellMode make_cell(const RunConfig& config, depth::CellVariant variant,
                          const backbone::BackboneWeights& backbone, const Datasets& data) {
  if (variant == depth::CellVariant::kForcedVanilla) return depth::CellMode::forced_vanilla();
  Rng rng(config.derived_seed("cell"));
  depth::CellMode mode =
      depth::CellMode::create(variant, backbone.config().d_model, rng, config.mode.init);
  if (config.mode.init == cells::CellInit::kNearVanilla) {
    const std::size_t n = std::min(config.mode.calibration_examples, data.finetune.size());
    std::vector<eval::SceneQAExample> sample(data.finetune.begin(), data.finetune.begin() + n);
    training::calibrate_correction_gate(mode, backbone, training::to_sequences(sample, data.vocab),
                                        config.mode.gate_target);
  }
  return mode;
}

training::TrainRecord run_finetune(const RunConfig& config, const backbone::BackboneWeights& backbone,
                                   depth::CellMode& mode, const Datasets& data) {
  training::TrainConfig t = config.finetune;
  t.seed = config.derived_seed("finetune");
  return training::finetune_cell(backbone, mode, training::to_sequences(data.finetune, data.vocab),
                                 t);
}

std::vector<std::size_t> find_disagreements(const backbone::BackboneWeights& backbone,
                                            const depth::CellMode& mode,
                                            const std::vector<eval::SceneQAExample>& data,
                                            const eval::Vocabulary& vocab, std::size_t limit) {
  const eval::EvalResult van = eval::run_eval(backbone, nullptr, data, vocab);
  const eval::EvalResult rnn = eval::run_eval(backbone, &mode, data, vocab);
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < data.size() && out.size() < limit; ++i) {
    if (van.decoded[i] != rnn.decoded[i]) out.push_back(i);
  }
  return out;
}

}  // namespace depthrnn::cli
