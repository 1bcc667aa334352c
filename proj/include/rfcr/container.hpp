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

#include <filesystem>
#include <fstream>
#include <optional>

#include "rfcr/binary_io.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/rfcc.hpp"

namespace rfcr {

// Container file: 8-byte magic "RFCRBIN1", u32 format version, then any of
// the HIERARCH / RFCCODES sections, terminated by tag "ENDBLOCK".
inline constexpr std::uint32_t kContainerVersion = 1;

struct Container {
  std::optional<Hierarchy> hierarchy;
  std::optional<RFCCStack> codes;
};

inline void write_container(const std::filesystem::path& path, const Container& c) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binio::put_tag(os, "RFCRBIN1");
  binio::put_u32(os, kContainerVersion);
  if (c.hierarchy) write_hierarchy_section(os, *c.hierarchy);
  if (c.codes) write_rfcc_section(os, *c.codes);
  binio::put_tag(os, "ENDBLOCK");
  if (!os) throw IoError("write failed: " + path.string());
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  binio::Reader in(is);
  in.expect_tag("RFCRBIN1");
  const auto version = in.u32();
  if (version != kContainerVersion) {
    throw FormatError("container version " + std::to_string(version) + " not supported");
  }
  Container c;
  for (;;) {
    const auto pos = is.tellg();
    const auto tag = in.tag();
    if (tag == "ENDBLOCK") break;
    is.seekg(pos);
    if (tag == "HIERARCH") {
      c.hierarchy = read_hierarchy_section(in);
    } else if (tag == "RFCCODES") {
      c.codes = read_rfcc_section(in);
    } else {
      throw FormatError("container: unknown section '" + tag + "'");
    }
  }
  return c;
}

}  // namespace rfcr
