// Copyright 2026 The ctcbridge Authors. All Rights Reserved.
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

// Binary checkpoint container.
//
//   bytes 0..3   "LEGO"
//   u32 LE       format version
//   u32 LE       header length in bytes
//   header       UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape",
//                "offset", "count"}, ...]}; offsets count bytes into the
//                payload
//   payload      IEEE-754 binary32 values, little endian, manifest order
//
// The header is written with sorted keys and shortest round-trip number
// formatting, so load followed by save reproduces the file byte for byte.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ctcbridge/autodiff.hpp"
#include "json.hpp"

namespace ctcbridge {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  // nullptr when absent.
  const Tensor* find(const std::string& name) const;
  void put(const std::string& name, const Tensor& t);

  std::vector<unsigned char> to_bytes() const;
  // Throws FormatError on a bad magic, unknown version, truncated data or a
  // manifest that does not tile the payload.
  static Checkpoint from_bytes(std::span<const unsigned char> bytes);

  // Writes to a sibling temporary file, then renames over `path`.
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// Adds every parameter value under its name.
void store_parameters(Checkpoint& ck, const std::vector<const Parameter*>& params);
// Copies values back by name; FormatError when one is missing or has the
// wrong shape.
void load_parameters(const Checkpoint& ck, const std::vector<Parameter*>& params);

}  // namespace ctcbridge
