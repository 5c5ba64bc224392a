#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace pced::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInternalError = 1;
inline constexpr int kUsageError = 2;     // bad flags, invalid config
inline constexpr int kStoreError = 3;     // unreadable, corrupt or missing store
inline constexpr int kRuntimeError = 4;   // provider, decode or bench failure
inline constexpr int kOracleMismatch = 5; // --oracle-single disagreement

int run(int argc, const char* const* argv, std::ostream& out,
        std::ostream& err);

// Convenience for tests: args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace pced::cli
