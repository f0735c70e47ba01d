#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <stdexcept>
#include <string>
#include <string_view>

namespace evprobe {

enum class ErrorKind {
  Domain,             // argument outside a function's mathematical domain
  Shape,              // wrong vector/matrix dimensions
  Data,               // empty or non-finite input data
  Schema,             // record does not match the dataset manifest
  NotFound,           // requested trace/entry is absent
  Integrity,          // checksum mismatch, truncation, bad magic
  Config,             // invalid configuration value
  Selection,          // token selection impossible for this sample
  Training,           // probe cannot be trained (e.g. one class)
  Metric,             // metric undefined (e.g. AUROC with one class)
  MethodUnavailable,  // baseline input missing from the trace
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

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

}  // namespace evprobe
