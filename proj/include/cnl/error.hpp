// Copyright 2026 The CNL Authors.
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

namespace cnl {

// Every failure raised by the library carries a category so that the CLI can
// map it onto an exit code (usage = 1, data = 2, numeric = 3).
enum class ErrorKind { kUsage, kData, kNumeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& message)
      : std::runtime_error("[" + module + "] " + message),
        kind_(kind),
        module_(std::move(module)) {}

  ErrorKind kind() const { return kind_; }
  const std::string& module() const { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

inline Error UsageError(std::string module, const std::string& message) {
  return Error(ErrorKind::kUsage, std::move(module), message);
}
inline Error DataError(std::string module, const std::string& message) {
  return Error(ErrorKind::kData, std::move(module), message);
}
inline Error NumericError(std::string module, const std::string& message) {
  return Error(ErrorKind::kNumeric, std::move(module), message);
}

}  // namespace cnl
