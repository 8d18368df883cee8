#pragma once

// Experiment runner behind the `cmoe` executable. Subcommands: gen, train,
// eval, interpret, infoplane, subsample.

#include <iosfwd>
#include <string>
#include <vector>

namespace cmoe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitFault = 3;

// `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cmoe
