// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace shira {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes disagree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A precondition on an argument value failed (budget, tolerance, rank...).
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Off-mask drift or another broken structural guarantee.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Misuse of a stateful object (double unload, stale cache...).
class StateError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Configuration file or flag problem.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Filesystem failure.
class IoError : public Error {
 public:
  using Error::Error;
};

enum class FormatErrorKind {
  bad_magic,
  unsupported_version,
  truncated,
  unsorted_coords,
  out_of_bounds,
  invalid_field,
  trailing_bytes,
};

const char* to_string(FormatErrorKind kind) noexcept;

/// Binary file failed validation on read.
class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& detail)
      : Error(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}
  FormatErrorKind kind() const noexcept { return kind_; }

 private:
  FormatErrorKind kind_;
};

}  // namespace shira
