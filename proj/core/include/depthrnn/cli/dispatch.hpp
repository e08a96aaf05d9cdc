// SPDX-License-Identifier: Apache-2.0
#ifndef DEPTHRNN_CLI_DISPATCH_HPP_
#define DEPTHRNN_CLI_DISPATCH_HPP_

#include <filesystem>
#include <ostream>
#include <string_view>

#include "depthrnn/cli/run_config.hpp"

namespace depthrnn::cli {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,          // invariant hook failed or other runtime error
  kConfigInvalid = 2,    // schema violation
  kMissingArtifact = 3,  // checkpoint or dataset not found
  kDiverged = 4,         // non-finite loss or weights
  kIntegrity = 5,        // frozen backbone changed
};

// Runs one of pretrain, finetune, eval, trace, ablate, gradcheck. Artifacts
// go under `out`; diagnostics go to `log`. Never throws.
int dispatch(std::string_view command, const RunConfig& config,
             const std::filesystem::path& out, std::ostream& log);

// Parses the config file (applying the seed override) and dispatches.
int run(std::string_view command, const std::filesystem::path& config_path,
        const std::optional<std::uint64_t>& seed_override, const std::filesystem::path& out,
        std::ostream& log);

}  // namespace depthrnn::cli

#endif  // DEPTHRNN_CLI_DISPATCH_HPP_
