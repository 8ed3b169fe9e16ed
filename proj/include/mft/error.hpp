#pragma once

#include <stdexcept>
#include <string>

namespace mft {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration, arguments or shapes (exit code 1).
class ConfigError : public Error {
public:
    using Error::Error;
};

class ShapeError : public ConfigError {
public:
    using ConfigError::ConfigError;
};

/// Failure while running a numerical procedure (exit code 2).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// A frozen tensor changed during training.
class FrozenWeightViolation : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// File system or container integrity failure (exit code 3).
class IoError : public Error {
public:
    using Error::Error;
};

class ChecksumError : public IoError {
public:
    using IoError::IoError;
};

} // namespace mft
