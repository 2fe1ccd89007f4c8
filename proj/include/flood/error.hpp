#pragma once

#include <stdexcept>
#include <string>

namespace flood {

/// Broad failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorCategory {
    usage,
    config,
    io,
    malformed_header,
    size_mismatch,
    grid_mismatch,
    invalid_argument,
    cfl_violation,
    divergence,
    singular,
};

const char* category_name(ErrorCategory c);

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const { return category_; }

private:
    ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& what) { throw Error(c, what); }

}  // namespace flood
