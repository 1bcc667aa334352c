// Copyright 2026 The RFCR Authors. All Rights Reserved.
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

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "rfcr/error.hpp"

namespace rfcr::binio {

// All multi-byte values are little-endian regardless of host order.

inline void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 4);
}

inline void put_u64(std::ostream& os, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  os.write(b, 8);
}

inline void put_i32(std::ostream& os, std::int32_t v) { put_u32(os, static_cast<std::uint32_t>(v)); }

inline void put_f64(std::ostream& os, double v) { put_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void put_tag(std::ostream& os, std::string_view tag) {
  if (tag.size() != 8) throw ArgumentError("binio: tags are 8 bytes");
  os.write(tag.data(), 8);
}

inline void put_string(std::ostream& os, std::string_view s) {
  put_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

class Reader {
 public:
  explicit Reader(std::istream& is) : is_(is) {}

  std::uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  std::uint64_t u64() {
    unsigned char b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }

  std::string tag() {
    std::string t(8, '\0');
    raw(t.data(), 8);
    return t;
  }

  void expect_tag(std::string_view want) {
    const auto got = tag();
    if (got != want) throw FormatError("binio: expected tag '" + std::string(want) + "', found '" + got + "'");
  }

  std::string string() {
    const auto n = u32();
    if (n > (1u << 24)) throw FormatError("binio: implausible string length");
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

  /// Reads a count and rejects values above `limit`.
  std::uint64_t count(std::uint64_t limit) {
    const auto n = u64();
    if (n > limit) throw FormatError("binio: implausible element count " + std::to_string(n));
    return n;
  }

 private:
  void raw(void* dst, std::size_t n) {
    is_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError("binio: unexpected end of file");
  }

  std::istream& is_;
};

}  // namespace rfcr::binio
