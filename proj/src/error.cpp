// Copyright (c) 2026 The shira-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "shira/error.hpp"

namespace shira {

const char* to_string(FormatErrorKind kind) noexcept {
  switch (kind) {
    case FormatErrorKind::bad_magic: return "bad magic";
    case FormatErrorKind::unsupported_version: return "unsupported version";
    case FormatErrorKind::truncated: return "truncated payload";
    case FormatErrorKind::unsorted_coords: return "unsorted coords";
    case FormatErrorKind::out_of_bounds: return "coord out of bounds";
    case FormatErrorKind::invalid_field: return "invalid field";
    case FormatErrorKind::trailing_bytes: return "trailing bytes";
  }
  return "unknown format error";
}

}  // namespace shira
