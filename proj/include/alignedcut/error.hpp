#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace alignedcut {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad magic, unsupported version or otherwise malformed container.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Shapes or counts disagree between a manifest and the data it describes.
class IntegrityError : public Error {
public:
    using Error::Error;
};

/// Non-finite or out-of-range values in input data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Invalid arguments or configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// A numerical procedure produced a non-finite value or failed outright.
class NumericError : public Error {
public:
    using Error::Error;
};

/// An iterative solver hit its iteration cap before reaching tolerance.
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, double residual, std::size_t iterations)
        : NumericError(what), residual_(residual), iterations_(iterations) {}

    double residual() const noexcept { return residual_; }
    std::size_t iterations() const noexcept { return iterations_; }

private:
    double residual_;
    std::size_t iterations_;
};

}  // namespace alignedcut
