#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "caldpm/config.hpp"
#include "caldpm/model.hpp"

namespace caldpm {

/// Exit codes shared by all subcommands.
enum ExitCode : int { kExitOk = 0, kExitCheckFailed = 1, kExitUsage = 2, kExitRuntime = 3 };

struct CommandPaths {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::filesystem::path> table;
};

/// Each command writes its artifacts under config.out and returns an exit code;
/// library errors propagate as exceptions.
int cmd_train(const RunConfig& config, std::ostream& log);
int cmd_calibrate(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
int cmd_sample(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
int cmd_evaluate(const RunConfig& config, const CommandPaths& paths, std::ostream& log);
int cmd_verify(const RunConfig& config, const CommandPaths& paths, std::ostream& log);

/// Oracle or checkpointed network from the model block, with the optional bias.
ModelPtr build_model(const RunConfig& config, const CommandPaths& paths);

/// Full command line: subcommand, --config, --seed, --workers, --out, --checkpoint, --table.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace caldpm
