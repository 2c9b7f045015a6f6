#pragma once

#include <stdexcept>
#include <string>

namespace softctl {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user-supplied parameter (temperature <= 0, node count < 2, ...).
class ParameterError : public Error {
public:
    using Error::Error;
};

/// A coefficient evaluated to a non-finite value, or the problem is
/// otherwise unusable.
class InvalidProblemError : public Error {
public:
    using Error::Error;
};

/// Lookup of an unknown registry entry.
class RegistryError : public Error {
public:
    using Error::Error;
};

/// Two fields or operators live on incompatible grids / shapes.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Math domain violation, e.g. log of a nonpositive density.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Iterative solver failed to meet its tolerance.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, double last_residual)
        : Error(what), last_residual_(last_residual) {}
    double last_residual() const noexcept { return last_residual_; }

private:
    double last_residual_;
};

/// Fokker-Planck kernel construction failed.
class KernelBuildError : public Error {
public:
    using Error::Error;
};

/// Problem mode does not support the requested pipeline.
class ModeError : public Error {
public:
    using Error::Error;
};

}  // namespace softctl
