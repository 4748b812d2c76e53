#pragma once

#include <string>
#include <vector>

namespace gav {

/// Entry point of the `gav` tool. Returns the process exit code: 0 on success,
/// 2 for configuration/argument/IO errors, 3 for infeasible budgets, 4 for overflow.
int run_cli(int argc, const char* const* argv);

/// Splices keys of a JSON config object into argv as `--key value` pairs unless the
/// flag already appears on the command line (explicit flags win).
std::vector<std::string> merge_config_args(const std::vector<std::string>& args);

/// Parses "a4w4" into (4, 4).
std::pair<int, int> parse_precision(const std::string& text);

}  // namespace gav
