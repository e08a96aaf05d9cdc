// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_CLI_RUN_CONFIG_HPP_
#define DEPTHRNN_CLI_RUN_CONFIG_HPP_

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "depthrnn/backbone/backbone.hpp"
#include "depthrnn/cells/cells.hpp"
#include "depthrnn/depth/hallurnn.hpp"
#include "depthrnn/eval/dataset.hpp"
#include "depthrnn/training/trainer.hpp"

namespace depthrnn::cli {

// Generation settings shared by the pretraining, finetuning and evaluation
// sets. Only the pretraining set carries the label bias.
struct DataConfig {
  std::size_t n_objects = 64;
  std::size_t scene_len = 6;
  std::size_t negative_pool = 3;
  double zipf_exponent = 1.0;
  std::size_t n_topics = 8;
  double topic_boost = 8.0;
  std::size_t pretrain_examples = 10000;
  std::size_t finetune_examples = 1000;
  std::size_t eval_examples = 1500;
  double flip_fraction = 0.8;
  eval::SplitMix pretrain_split_mix{0.4, 0.4, 0.2};
  eval::SplitMix split_mix;  // finetuning and evaluation sets
};

struct ModeConfig {
  // A cell variant name, or "vanilla" for the mode-free baseline.
  std::string variant = "dgdpu";
  cells::CellInit init = cells::CellInit::kXavier;
  // Mean correction-gate activation targeted by near-vanilla calibration.
  double gate_target = 0.8807970779778823;  // sigmoid(2)
  std::size_t calibration_examples = 100;

  bool is_vanilla() const { return variant == "vanilla"; }
  depth::CellVariant cell_variant() const { return depth::parse_variant(variant); }
};

struct PathsConfig {
  // Relative paths resolve against the output directory.
  std::string backbone = "backbone.ckpt";
  // Empty: cell_<variant>.ckpt.
  std::string cell;
  std::string data = "data";
};

struct TraceConfig {
  // Eval-set indices to trace. Empty: search for prompts where vanilla and
  // HalluRNN answers differ.
  std::vector<std::size_t> prompts;
  std::size_t max_prompts = 4;
};

struct GradcheckConfig {
  std::size_t instances = 20;
  std::vector<std::size_t> dims = {2, 4, 8};
};

struct RunConfig {
  std::uint64_t seed = 0;
  backbone::BackboneConfig backbone;
  DataConfig data;
  training::TrainConfig pretrain;
  training::TrainConfig finetune;
  ModeConfig mode;
  PathsConfig paths;
  TraceConfig trace;
  GradcheckConfig gradcheck;

  // Cross-section checks (vocabulary size, widths, dataset feasibility).
  // Throws ConfigError naming the offending field.
  void validate() const;

  eval::Vocabulary vocabulary() const { return eval::Vocabulary{data.n_objects}; }
  // backbone with vocab filled in from the data section.
  backbone::BackboneConfig model() const;
  eval::DatasetSpec dataset_spec(std::string_view role) const;
  std::uint64_t derived_seed(std::string_view label) const;
};

RunConfig default_run_config();

// Every section and field is optional; unknown keys and type mismatches are
// rejected with ConfigError("<field.path>: <reason>").
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::string& path);

// Canonical JSON rendering; parse_run_config(to_json(c)) == c.
std::string to_json(const RunConfig& config);

}  // namespace depthrnn::cli

#endif  // DEPTHRNN_CLI_RUN_CONFIG_HPP_
