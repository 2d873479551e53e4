#pragma once

#include <stdexcept>
#include <string>

namespace flexicrime {

// Bad configuration: rejected before any work starts (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed or unusable input data: missing columns, empty datasets (exit 3).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Attention or sampling asked to operate over an empty event history.
class EmptyHistoryError : public DataError {
public:
    using DataError::DataError;
};

// Numerical breakdown: non-finite state, singular jump, diverged training (exit 4).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Unreadable, corrupt, or version-mismatched checkpoint (exit 4).
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace flexicrime
