// Copyright 2026 The dphr Authors
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
#include <string_view>

namespace dphr {

enum class ErrorCode {
  shape_mismatch,
  invalid_argument,
  division_by_zero,
  non_scalar_loss,
  empty_reduction,
  invalid_config,
  degenerate_input,
  non_finite,
  io,
  format,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::shape_mismatch: return "shape_mismatch";
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::division_by_zero: return "division_by_zero";
    case ErrorCode::non_scalar_loss: return "non_scalar_loss";
    case ErrorCode::empty_reduction: return "empty_reduction";
    case ErrorCode::invalid_config: return "invalid_config";
    case ErrorCode::degenerate_input: return "degenerate_input";
    case ErrorCode::non_finite: return "non_finite";
    case ErrorCode::io: return "io";
    case ErrorCode::format: return "format";
  }
  return "unknown";
}

/// Every failure raised by the library. `code()` is stable and machine-readable;
/// `what()` is a human-readable single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Malformed or truncated file. `offset()` is the byte position where parsing stopped.
class FormatError : public Error {
 public:
  FormatError(const std::string& message, std::size_t offset)
      : Error(ErrorCode::format, message + " (at byte " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace dphr
