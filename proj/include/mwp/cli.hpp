#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace mwp::cli {

/// Exit codes of `run`.
inline constexpr int kOk = 0;
inline constexpr int kWarnings = 1; // warnings under --strict
inline constexpr int kError = 2;

/// Runs one `mwp` command line; `args` excludes the program name. Reports go
/// to `out` unless --out names a directory, diagnostics go to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace mwp::cli
