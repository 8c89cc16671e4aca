#ifndef KPRNET_ERRORS_HPP
#define KPRNET_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace kpr {

// Malformed bytes on disk or on the wire.
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad values in otherwise well-formed input (non-finite floats etc).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Caller violated an operation's contract (shape mismatch, out-of-range id).
struct ArgumentError : std::invalid_argument {
    explicit ArgumentError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Operation invoked in the wrong mode or before required state exists.
struct StateError : std::logic_error {
    explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace kpr

#endif
