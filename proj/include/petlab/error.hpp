#pragma once

#include <stdexcept>
#include <string>

namespace petlab {

// Error taxonomy. Every failure surfaced across the C API maps to one of
// these categories; process exit codes follow the same numbering.
enum class ErrorKind {
    Input = 1,    // bad runtime data: malformed dataset, shape mismatch, ...
    Config = 2,   // invalid or inconsistent configuration
    Io = 3,       // filesystem / serialization trouble
    Numeric = 4,  // non-finite values, degenerate norms, diverged training
    Internal = 5, // bugs; should never fire
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void throw_input(const std::string& msg) { throw Error(ErrorKind::Input, msg); }
[[noreturn]] inline void throw_config(const std::string& msg) { throw Error(ErrorKind::Config, msg); }
[[noreturn]] inline void throw_io(const std::string& msg) { throw Error(ErrorKind::Io, msg); }
[[noreturn]] inline void throw_numeric(const std::string& msg) { throw Error(ErrorKind::Numeric, msg); }
[[noreturn]] inline void throw_internal(const std::string& msg) { throw Error(ErrorKind::Internal, msg); }

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Input: return "input";
        case ErrorKind::Config: return "config";
        case ErrorKind::Io: return "io";
        case ErrorKind::Numeric: return "numeric";
        case ErrorKind::Internal: return "internal";
    }
    return "unknown";
}

} // namespace petlab
