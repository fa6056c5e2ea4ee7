#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace advlab {

// Exit codes reported by the CLI. Exceptions carry the code they map to.
enum class ExitCode : int {
    ok = 0,
    failure = 1,
    config = 2,
    data = 3,
    numeric = 4,
    capacity = 5,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
    virtual ExitCode exit_code() const { return ExitCode::failure; }
};

// Rejected input or bad configuration: shape mismatch, out-of-range
// hyperparameter, unknown id, config parse failure.
class ConfigError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::config; }
};

// File format or dataset problems (bad magic, truncation, count mismatch).
class DataError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::data; }
};

// Non-finite values or divergence.
class NumericError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const override { return ExitCode::numeric; }
};

// Not enough qualifying samples; reports how many qualified.
class CapacityError : public Error {
public:
    CapacityError(const std::string& msg, std::size_t qualified)
        : Error(msg), qualified_(qualified) {}
    std::size_t qualified() const { return qualified_; }
    ExitCode exit_code() const override { return ExitCode::capacity; }

private:
    std::size_t qualified_;
};

}  // namespace advlab
