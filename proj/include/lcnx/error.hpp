// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace lcnx {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not agree with what an operation requires.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration, arguments or missing inputs.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf produced or consumed, or a training run diverged.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Two artifacts cannot be combined (checkpoint vs model, class vocabularies).
class CompatibilityError : public Error {
public:
    using Error::Error;
};

/// Filesystem or decoding failure.
class IoError : public Error {
public:
    using Error::Error;
};

/// Checkpoint payload does not match its recorded checksum, or is truncated.
class ChecksumError : public IoError {
public:
    using IoError::IoError;
};

} // namespace lcnx
