#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace panelclust::cli {

inline constexpr const char* kVersion = "1.0.0";

// Entry point shared by the executable and the tests. Writes human output to
// `out`, machine-readable errors to `err`, and returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace panelclust::cli
