#pragma once

#include <stdexcept>
#include <string>

namespace mrp {

// Failure categories; the CLI maps each one onto a process exit code.
enum class ErrorKind {
    Domain,      // argument outside the mathematical domain of a function
    Config,      // malformed model / experiment / fit configuration
    Data,        // malformed or inconsistent data
    Estimation,  // solver or estimator failure
    Check,       // a Monte Carlo acceptance check failed
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(ErrorKind::Domain, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class EstimationError : public Error {
public:
    explicit EstimationError(const std::string& what) : Error(ErrorKind::Estimation, what) {}
};

// Thrown by the solver when the information matrix is singular.
class NoCovariateContrast : public EstimationError {
public:
    NoCovariateContrast() : EstimationError("no covariate contrast: information matrix is singular") {}
};

// Thrown when more than half of the kernel-weighted increments had to be
// skipped because their leave-one-out risk mass was not positive.
class BandwidthError : public EstimationError {
public:
    explicit BandwidthError(const std::string& what) : EstimationError(what) {}
};

}  // namespace mrp
