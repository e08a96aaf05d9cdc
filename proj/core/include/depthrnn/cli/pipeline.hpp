// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_CLI_PIPELINE_HPP_
#define DEPTHRNN_CLI_PIPELINE_HPP_

#include <vector>

#include "depthrnn/cli/run_config.hpp"
#include "depthrnn/eval/evaluator.hpp"

// The pretrain -> freeze -> finetune -> eval steps behind the CLI commands,
// all seeded from RunConfig::seed.
namespace depthrnn::cli {

struct Datasets {
  eval::Vocabulary vocab;
  std::vector<eval::SceneQAExample> pretrain;  // label-biased
  std::vector<eval::SceneQAExample> finetune;  // clean
  std::vector<eval::SceneQAExample> eval;      // clean, disjoint draw
};

Datasets make_datasets(const RunConfig& config);

// Trains and freezes the backbone on the biased pretraining set.
backbone::BackboneWeights run_pretrain(const RunConfig& config, const Datasets& data,
                                       training::TrainRecord* record = nullptr);

// Fresh cell for `variant`, calibrated on the finetuning set when the
// near-vanilla init is selected. All variants draw from the same seed.
depth::CellMode make_cell(const RunConfig& config, depth::CellVariant variant,
                          const backbone::BackboneWeights& backbone, const Datasets& data);

training::TrainRecord run_finetune(const RunConfig& config, const backbone::BackboneWeights& backbone,
                                   depth::CellMode& mode, const Datasets& data);

// Eval-set indices whose greedy answers differ between vanilla decoding and
// `mode`, in index order, at most `limit`.
std::vector<std::size_t> find_disagreements(const backbone::BackboneWeights& backbone,
                                            const depth::CellMode& mode,
                                            const std::vector<eval::SceneQAExample>& data,
                                            const eval::Vocabulary& vocab, std::size_t limit);

}  // namespace depthrnn::cli

#endif  // DEPTHRNN_CLI_PIPELINE_HPP_
