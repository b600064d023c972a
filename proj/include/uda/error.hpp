/*
 * Copyright 2026 The udakit Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#ifndef UDA_ERROR_HPP_
#define UDA_ERROR_HPP_

#include <stdexcept>
#include <string>

namespace uda {

// Error classes map one-to-one onto CLI exit codes (see tools/udakit.cpp).
enum class ErrorKind {
  kArgument = 2,
  kConfig = 3,
  kIo = 4,
  kManifestMissingFile = 5,
  kManifestDuplicateId = 6,
  kManifestMalformed = 7,
  kBalancing = 8,
  kLocalization = 9,
  kUndefinedMetric = 10,
  kResampling = 11,
  kTraining = 12,
};

const char* error_kind_name(ErrorKind kind);

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

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace uda

#endif  // UDA_ERROR_HPP_
