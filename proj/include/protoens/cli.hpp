#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace protoens {

inline constexpr int kExitOk = 0;
inline constexpr int kExitDataError = 1;
inline constexpr int kExitConfigError = 2;

/// Entry point of the `protoens` tool. `args` excludes the program name.
/// Subcommands: eval, synth, validate.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace protoens
