#pragma once

#include <iosfwd>

namespace qdawg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitInvalid = 2;  // usage errors and config/physics validation failures

/// Entry point of the `qdawg` tool. Normal output goes to `out`, diagnostics
/// and validation reports to `err`.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace qdawg::cli
