#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "qorseek/design_space.hpp"
#include "qorseek/run_config.hpp"

namespace qorseek {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitMissingInput = 2,
  kExitInvalidConfig = 3,
  kExitInternal = 4,
};

/// A required input file or directory does not exist or holds no usable data.
class MissingInputError : public std::runtime_error {
public:
  MissingInputError(std::filesystem::path path, const std::string& what)
      : std::runtime_error(what + ": " + path.string()), path_(std::move(path)) {}
  const std::filesystem::path& path() const noexcept { return path_; }

private:
  std::filesystem::path path_;
};

/// Files matching a shell glob, sorted. Throws MissingInputError when nothing matches.
std::vector<std::filesystem::path> resolve_kernel_glob(const std::string& pattern);

/// Loads and validates every kernel behind the glob. Kernel names must be unique.
std::vector<std::shared_ptr<const KernelDescriptor>> load_kernels(const std::string& pattern);

/// Subcommands. Each writes its artifacts under config.out and a short summary to `out`.
void cmd_dse(const RunConfig& config, std::ostream& out);
void cmd_pairs(const RunConfig& config, std::ostream& out);
void cmd_train_rm(const RunConfig& config, std::ostream& out);
void cmd_grpo(const RunConfig& config, std::ostream& out);
void cmd_report(const RunConfig& config, std::ostream& out);

/// Full command-line entry point: parses flags, loads the config file, dispatches,
/// and maps failures to exit codes (2 missing input, 3 invalid config, 4 internal).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qorseek
