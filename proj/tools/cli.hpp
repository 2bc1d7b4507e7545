#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cavf::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInternal = 1;
inline constexpr int kUsage = 2;    // bad flags or config values
inline constexpr int kData = 3;     // unreadable, malformed or mismatched files
inline constexpr int kNumeric = 4;  // degenerate statistics, divergence, failed gradcheck

// args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cavf::cli
