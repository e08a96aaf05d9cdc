// SPDX-License-Identifier: Apache-2.0
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "depthrnn/cli/dispatch.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Depth-recurrent hallucination correction on a toy transformer"};
  app.require_subcommand(1, 1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";

  const char* commands[][2] = {
      {"pretrain", "Train the biased backbone, freeze it, write datasets"},
      {"finetune", "Train the configured cell against the frozen backbone"},
      {"eval", "Evaluate vanilla or a cell variant on the eval split"},
      {"trace", "Per-layer lens and gate traces for disagreement prompts"},
      {"ablate", "Finetune and evaluate dgdpu, gru, constraint_only, correction_only"},
      {"gradcheck", "Finite-difference check of cell and recurrence gradients"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON run config")->required();
    sub->add_option("--seed", seed, "Overrides the config seed");
    sub->add_option("--out", out, "Output directory")->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : depthrnn::cli::kConfigInvalid;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  return depthrnn::cli::run(command, config_path, seed, out, std::cerr);
}
