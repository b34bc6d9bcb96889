#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eaml {

// Exit codes used by the command-line driver.
enum class ExitCode : int {
    ok = 0,
    usage = 2,
    data = 3,
    convergence = 4,
};

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual ExitCode exit_code() const noexcept { return ExitCode::data; }
};

/// Bad arguments or configuration (violated preconditions on parameters).
class UsageError : public Error {
public:
    using Error::Error;
    ExitCode exit_code() const noexcept override { return ExitCode::usage; }
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// An iterative solver hit its iteration cap. Carries the objective trace.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> trace)
        : Error(what), trace_(std::move(trace)) {}
    ExitCode exit_code() const noexcept override { return ExitCode::convergence; }
    const std::vector<double>& trace() const noexcept { return trace_; }

private:
    std::vector<double> trace_;
};

} // namespace eaml
