#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace nisim::cli {

/// Process exit codes.
enum ExitCode : int {
  kSimulatable = 0,
  kNotSimulatable = 1,
  kIndeterminate = 2,
  kUsage = 64,
  kDataFormat = 65,
  kNumeric = 70,
};

/// Runs one subcommand. `args` excludes the program name. Results go to `out`
/// (or the --out file); errors go to `err` as a JSON object.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv);

}  // namespace nisim::cli
