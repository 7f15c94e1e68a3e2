// Copyright 2026 The K2S Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <stdexcept>
#include <string>

namespace k2s {

/// Broad failure classes. Each maps onto one CLI exit code.
enum class ErrorKind {
  kUsage,       // bad flags, missing config, unreadable input path
  kValidation,  // data violates a documented invariant
  kNotFound,    // lookup of an unknown class / run / case
  kEndpoint,    // LLM endpoint unreachable or failing after retries
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

/// 0 success, 1 usage/config, 2 data validation, 3 external endpoint.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kUsage:
      return 1;
    case ErrorKind::kValidation:
    case ErrorKind::kNotFound:
      return 2;
    case ErrorKind::kEndpoint:
      return 3;
  }
  return 1;
}

}  // namespace k2s
