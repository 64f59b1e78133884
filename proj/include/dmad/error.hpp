#pragma once

#include <stdexcept>
#include <string>

namespace dmad {

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape or geometry mismatch between tensors/layers.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration value (out-of-range hyperparameter, unknown key, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad data: out-of-range label, empty split, identical morph subjects, ...
class DataError : public Error {
public:
    using Error::Error;
};

/// Malformed serialized input (PGM, CSV, checkpoint).
class ParseError : public Error {
public:
    using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Numerical evaluation failure (non-finite loss, non-finite scores).
class EvalError : public Error {
public:
    using Error::Error;
};

/// Learning-rate schedule queried outside its domain.
class ScheduleError : public Error {
public:
    using Error::Error;
};

/// API contract violation (e.g. training against an unfrozen teacher).
class ContractError : public Error {
public:
    using Error::Error;
};

} // namespace dmad
