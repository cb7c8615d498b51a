#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cdsim {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Rejection sampling could not place all atoms at the requested minimum
/// separation.
class SamplingError : public Error {
public:
    using Error::Error;
};

/// Two atoms (or an atom and an observation point) coincide.
class SingularGeometry : public Error {
public:
    using Error::Error;
};

class SingularSystem : public Error {
public:
    SingularSystem(const std::string& what, double condition)
        : Error(what), condition_(condition) {}

    double condition_estimate() const noexcept { return condition_; }

private:
    double condition_;
};

class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double estimate)
        : Error(what), estimate_(estimate) {}

    double error_estimate() const noexcept { return estimate_; }

private:
    double estimate_;
};

class LapackError : public Error {
public:
    using Error::Error;
};

class EnsembleError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration. `key` is the dotted path of the offending
/// entry (empty for syntax errors); `line` is 1-based, 0 when unknown.
class ConfigError : public Error {
public:
    ConfigError(const std::string& what, std::string key = {}, int line = 0)
        : Error(what), key_(std::move(key)), line_(line) {}

    const std::string& key() const noexcept { return key_; }
    int line() const noexcept { return line_; }

private:
    std::string key_;
    int line_;
};

} // namespace cdsim
