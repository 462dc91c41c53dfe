// Copyright 2026 The CBD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <stdexcept>
#include <string>

namespace cbd {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments, bad configuration, violated preconditions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Tensor/vector dimension mismatches.
class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Malformed or unreadable files: bad magic, version mismatch,
// truncation, checksum failure. `code()` distinguishes them.
class FormatError : public Error {
 public:
  enum class Code { bad_magic, version_mismatch, truncated, checksum, malformed };
  FormatError(Code code, const std::string& msg) : Error(msg), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

// Operation invoked on an object in the wrong state (e.g. stepping a
// finished episode).
class StateError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf encountered where finite values are required; training
// divergence; rejected optimizer updates.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace cbd
