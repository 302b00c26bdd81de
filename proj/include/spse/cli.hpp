#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace spse::cli {

/// Process exit codes. Failures also print one JSON line
/// {"error": {"kind": ..., "message": ...}} on the error stream.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,     // numeric, training and other runtime errors
  kUsage = 2,       // bad flags, bad config, invalid arguments
  kInputError = 3,  // missing or unreadable files, malformed containers
};

int exit_code_for_kind(const std::string& kind);

/// One `spse` invocation in-process. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace spse::cli
