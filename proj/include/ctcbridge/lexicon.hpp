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

#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "ctcbridge/tensor.hpp"

namespace ctcbridge {

// Label sequence over LM token ids [0, V). Never holds the blank.
struct TokenSeq {
  std::vector<int> ids;

  std::size_t size() const { return ids.size(); }
  bool empty() const { return ids.empty(); }
  auto operator<=>(const TokenSeq&) const = default;
};

// Frame-level CTC path over [0, V]; V is the blank.
struct Alignment {
  std::vector<int> path;
  auto operator<=>(const Alignment&) const = default;
};

// LM vocabulary. The CTC output space has V + 1 entries and the blank takes
// the last slot, so encoder and decoder share token ids unchanged.
class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::vector<std::string> tokens, int sep, int bos, int eos);

  // Words "w00".."w{V-4}" followed by <sep>, <bos>, <eos>.
  static Vocabulary synthetic(std::size_t size);

  std::size_t size() const { return tokens_.size(); }
  int blank_id() const { return static_cast<int>(tokens_.size()); }
  int sep_id() const { return sep_; }
  int bos_id() const { return bos_; }
  int eos_id() const { return eos_; }
  bool is_special(int id) const { return id == sep_ || id == bos_ || id == eos_; }

  const std::string& token(int id) const;
  int id_of(const std::string& tok) const;
  bool contains(const std::string& tok) const { return index_.count(tok) > 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // {"tokens": [...], "sep": i, "bos": i, "eos": i}
  std::string to_json() const;
  static Vocabulary from_json(const std::string& text);

  std::string render(const TokenSeq& seq) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.sep_ == b.sep_ && a.bos_ == b.bos_ && a.eos_ == b.eos_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int sep_ = -1, bos_ = -1, eos_ = -1;
};

// Raw per-frame scores over V + 1 outputs.
struct LogitGram {
  Tensor logits;  // [T', V+1]

  LogitGram() = default;
  explicit LogitGram(Tensor z);
  std::size_t frames() const { return logits.rows(); }
  std::size_t classes() const { return logits.cols(); }
};

// Per-frame distributions over V + 1 outputs.
struct Posteriorgram {
  Tensor probs;  // [T', V+1]

  std::size_t frames() const { return probs.rows(); }
  std::size_t classes() const { return probs.cols(); }
};

Posteriorgram to_posteriorgram(const LogitGram& z, double tau = 1.0);

// Merge adjacent repeats, then delete blanks. `vocab_size` is V; path
// entries must lie in [0, V].
TokenSeq collapse(const Alignment& a, std::size_t vocab_size);

struct PosteriorViolation {
  std::size_t row = 0;
  std::string reason;
};

// First row with negative mass or a sum off by more than `tol`.
std::optional<PosteriorViolation> validate_posteriorgram(const Posteriorgram& p, double tol = 1e-5);

}  // namespace ctcbridge
