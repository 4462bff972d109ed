#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace v2m::cli {

/// Entry point of the `v2m` tool. `args` excludes the program name.
/// Exit codes: 0 success, 2 config or usage error, 3 missing or malformed
/// input, 4 numeric failure, 1 anything else. Failures print one JSON object
/// {"error", "message", "exit_code"} to `err`.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace v2m::cli
