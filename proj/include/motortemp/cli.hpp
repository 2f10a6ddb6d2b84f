#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace motortemp::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumeric = 3;

// Runs one command. `args` excludes the program name. A leading `--config run.json`
// without a command replays the command recorded in that file.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace motortemp::cli
