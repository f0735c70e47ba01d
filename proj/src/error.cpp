// SPDX-License-Identifier: Apache-2.0

#include "evprobe/error.hpp"

namespace evprobe {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Domain: return "domain";
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Data: return "data";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::Integrity: return "integrity";
    case ErrorKind::Config: return "config";
    case ErrorKind::Selection: return "selection";
    case ErrorKind::Training: return "training";
    case ErrorKind::Metric: return "metric";
    case ErrorKind::MethodUnavailable: return "method-unavailable";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace evprobe
