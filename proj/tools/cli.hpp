#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace scialloc::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumerical = 3;
inline constexpr int kSchemaVersion = 1;

/// Runs one command: simulate | estimate | reallocate | report. Diagnostics go
/// to `err`; help text to `out`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace scialloc::cli
