// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace mgsd {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor or batch shapes do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Invalid hyperparameter or configuration value.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Input data violates a precondition (labels, masks, manifests, score sets).
class DataError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward from a non-scalar.
class UsageError : public Error {
public:
    using Error::Error;
};

/// CKA evaluated on a constant (zero-variance) activation matrix.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

/// Training diverged (non-finite loss).
class TrainingError : public Error {
public:
    using Error::Error;
};

/// Binary feature or checkpoint file could not be decoded.
class ParseError : public Error {
public:
    enum class Kind { BadMagic, VersionMismatch, Truncated, NonFinite, Io, Malformed };

    ParseError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::string to_string(ParseError::Kind kind);

}  // namespace mgsd
