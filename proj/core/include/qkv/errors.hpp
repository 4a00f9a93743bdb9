// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The qkvembed Authors

#pragma once

#include <stdexcept>
#include <string>

namespace qkv {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents do not conform for the requested operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// An index (label, axis, slice bound) lies outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity reached a place where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Backward called on a leaf that already holds a gradient.
class GradStateError : public Error {
 public:
  using Error::Error;
};

/// Requested functionality the autodiff core does not provide.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// A loss closure produced different values for identical inputs.
class DeterminismError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class DigestMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

class IdxMagicError : public Error {
 public:
  using Error::Error;
};

class IdxLengthError : public Error {
 public:
  using Error::Error;
};

class IdxTruncatedError : public Error {
 public:
  using Error::Error;
};

/// A code vector with zero norm cannot be normalized for correlation.
class DegenerateCodeError : public Error {
 public:
  using Error::Error;
};

}  // namespace qkv
