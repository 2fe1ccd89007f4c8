#pragma once

#include <iosfwd>

#include "flood/error.hpp"

namespace flood::cli {

/// Process exit codes.
enum ExitCode : int {
    exit_ok = 0,
    exit_other = 1,
    exit_usage = 2,
    exit_config = 3,
    exit_io = 4,
    exit_solver = 5,
    exit_divergence = 6,
    exit_singular = 7,
    exit_data = 8,       // grid or size mismatch between inputs
    exit_argument = 9,   // values rejected by a module
};

int exit_code(ErrorCategory c);

/// Entry point behind the `flood` executable. Progress goes to `out`, the single
/// `error: <category>: <message>` line to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace flood::cli
