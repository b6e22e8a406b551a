#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace hmap {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the hybridmap command line. Usage errors exit 2 with usage text on `err`; runtime failures
/// exit 1 with a one-line diagnostic.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

} // namespace hmap
