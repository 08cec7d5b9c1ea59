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

#include "ctcbridge/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>

namespace ctcbridge {
namespace {

constexpr char kMagic[4] = {'L', 'E', 'G', 'O'};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void Checkpoint::put(const std::string& name, const Tensor& t) {
  for (auto& [n, existing] : tensors) {
    if (n == name) {
      existing = t;
      return;
    }
  }
  tensors.emplace_back(name, t);
}

std::vector<unsigned char> Checkpoint::to_bytes() const {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"count", t.size()}});
    offset += 4 * t.size();
  }
  const nlohmann::json header = {{"meta", meta}, {"tensors", manifest}};
  const std::string text = header.dump();
  CTCB_REQUIRE(text.size() <= 0xFFFFFFFFu, "checkpoint: header too large");

  std::vector<unsigned char> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : tensors)
    for (float x : t.values()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

Checkpoint Checkpoint::from_bytes(std::span<const unsigned char> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("checkpoint: bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported format version " + std::to_string(version));
  const std::size_t hlen = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + hlen) throw FormatError("checkpoint: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: header is not JSON: ") + e.what());
  }
  if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array())
    throw FormatError("checkpoint: header lacks a tensor manifest");

  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  const unsigned char* payload = bytes.data() + 12 + hlen;
  const std::size_t payload_len = bytes.size() - 12 - hlen;
  std::size_t expect = 0;
  try {
    for (const auto& e : header["tensors"]) {
      const auto name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto count = e.at("count").get<std::size_t>();
      if (count != shape_size(shape)) throw FormatError("checkpoint: count/shape mismatch for " + name);
      if (offset != expect) throw FormatError("checkpoint: tensor " + name + " is not contiguous");
      if (offset + 4 * count > payload_len) throw FormatError("checkpoint: truncated payload at " + name);
      std::vector<float> vals(count);
      for (std::size_t i = 0; i < count; ++i) vals[i] = std::bit_cast<float>(get_u32(payload + offset + 4 * i));
      if (ck.find(name)) throw FormatError("checkpoint: duplicate tensor " + name);
      ck.tensors.emplace_back(name, Tensor(shape, std::move(vals)));
      expect = offset + 4 * count;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad manifest entry: ") + e.what());
  }
  if (expect != payload_len) throw FormatError("checkpoint: payload length does not match the manifest");
  return ck;
}

void Checkpoint::save(const std::string& path) const {
  const auto bytes = to_bytes();
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at '" + path + "': " + ec.message());
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

void store_parameters(Checkpoint& ck, const std::vector<const Parameter*>& params) {
  for (const Parameter* p : params) ck.put(p->name, p->value);
}

void load_parameters(const Checkpoint& ck, const std::vector<Parameter*>& params) {
  for (Parameter* p : params) {
    const Tensor* t = ck.find(p->name);
    if (!t) throw FormatError("checkpoint: missing tensor " + p->name);
    if (t->shape() != p->value.shape())
      throw FormatError("checkpoint: tensor " + p->name + " has shape " + shape_str(t->shape()) + ", expected " +
                        shape_str(p->value.shape()));
    p->value = *t;
  }
}

}  // namespace ctcbridge
