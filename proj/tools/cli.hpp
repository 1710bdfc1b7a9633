#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hyperkernel::cli {

/// Exit codes: 0 success, 1 runtime failure, 2 configuration error.
inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Runs one subcommand. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace hyperkernel::cli
