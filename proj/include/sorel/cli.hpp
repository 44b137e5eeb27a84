#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace sorel {

/// Runs one subcommand. `args` excludes the program name, e.g.
/// {"sorel", "--config", "run.json"}. Returns the process exit status: 0 on
/// success, otherwise the ErrorCode value (1 for unexpected failures) with a
/// one-line JSON error object written to `err`.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace sorel
