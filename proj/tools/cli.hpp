#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace glyphforge::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

struct CommandResult {
  int exit_code = kOk;
  std::vector<std::filesystem::path> artifacts;
  std::string summary;
};

/// args excludes the program name.
CommandResult run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace glyphforge::cli
