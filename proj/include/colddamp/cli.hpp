#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "colddamp/errors.hpp"

namespace colddamp {

/// Exit status for an error raised while running a command: 1 for invalid
/// input or configuration, 2 for numerical or fit failures.
int exit_code_for(const Error& e);

/// Runs one tool invocation. `args` excludes the program name. Tables go to
/// `out`; failures are reported on `err` as a single JSON object.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace colddamp
