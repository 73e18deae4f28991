// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fabricnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Caller supplied a bad argument or configuration value (CLI exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t position)
      : ValidationError(what + " (at position " + std::to_string(position) + ")"),
        position_(position) {}

  std::size_t position() const noexcept { return position_; }

 private:
  std::size_t position_;
};

// Failures reading or interpreting external data (CLI exit code 2).
class DataError : public Error {
 public:
  enum class Kind { kMissingFile, kMalformedRow, kEncoding, kDuplicate, kDecode, kIo };

  DataError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kMagicMismatch, kCrcMismatch, kUnsupportedVersion, kTruncated, kMalformed };

  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace fabricnet
