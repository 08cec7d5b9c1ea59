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

#include "ctcbridge/lexicon.hpp"

#include <cmath>
#include <cstdio>

#include "ctcbridge/autodiff.hpp"
#include "json.hpp"

namespace ctcbridge {

Vocabulary::Vocabulary(std::vector<std::string> tokens, int sep, int bos, int eos)
    : tokens_(std::move(tokens)), sep_(sep), bos_(bos), eos_(eos) {
  const int v = static_cast<int>(tokens_.size());
  CTCB_REQUIRE(v > 0, "vocabulary is empty");
  for (int i = 0; i < v; ++i) {
    auto [it, fresh] = index_.emplace(tokens_[i], i);
    CTCB_REQUIRE(fresh, "duplicate vocabulary token '" + tokens_[i] + "'");
  }
  for (int s : {sep, bos, eos}) CTCB_REQUIRE(s >= 0 && s < v, "special token id out of range");
}

Vocabulary Vocabulary::synthetic(std::size_t size) {
  CTCB_REQUIRE(size >= 5, "synthetic vocabulary needs at least 2 words plus 3 specials");
  std::vector<std::string> toks;
  const std::size_t words = size - 3;
  for (std::size_t i = 0; i < words; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "w%02zu", i);
    toks.emplace_back(buf);
  }
  toks.emplace_back("<sep>");
  toks.emplace_back("<bos>");
  toks.emplace_back("<eos>");
  const int w = static_cast<int>(words);
  return Vocabulary(std::move(toks), w, w + 1, w + 2);
}

const std::string& Vocabulary::token(int id) const {
  CTCB_REQUIRE(id >= 0 && id < static_cast<int>(tokens_.size()), "token id out of range");
  return tokens_[id];
}

int Vocabulary::id_of(const std::string& tok) const {
  auto it = index_.find(tok);
  CTCB_REQUIRE(it != index_.end(), "unknown token '" + tok + "'");
  return it->second;
}

std::string Vocabulary::to_json() const {
  nlohmann::json j;
  j["tokens"] = tokens_;
  j["sep"] = sep_;
  j["bos"] = bos_;
  j["eos"] = eos_;
  return j.dump();
}

Vocabulary Vocabulary::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    return Vocabulary(j.at("tokens").get<std::vector<std::string>>(), j.at("sep").get<int>(),
                      j.at("bos").get<int>(), j.at("eos").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("vocabulary json: ") + e.what());
  }
}

std::string Vocabulary::render(const TokenSeq& seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    if (i) out += ' ';
    out += token(seq.ids[i]);
  }
  return out;
}

LogitGram::LogitGram(Tensor z) : logits(std::move(z)) {
  CTCB_REQUIRE(logits.rank() == 2, "logit-gram must be rank 2");
  for (float v : logits.values()) CTCB_REQUIRE(std::isfinite(v), "logit-gram has a non-finite entry");
}

Posteriorgram to_posteriorgram(const LogitGram& z, double tau) {
  return Posteriorgram{kernels::softmax_rows(z.logits, tau)};
}

TokenSeq collapse(const Alignment& a, std::size_t vocab_size) {
  const int blank = static_cast<int>(vocab_size);
  TokenSeq out;
  int prev = -1;
  for (int s : a.path) {
    CTCB_REQUIRE(s >= 0 && s <= blank, "alignment entry " + std::to_string(s) + " outside [0, V]");
    if (s != prev && s != blank) out.ids.push_back(s);
    prev = s;
  }
  return out;
}

std::optional<PosteriorViolation> validate_posteriorgram(const Posteriorgram& p, double tol) {
  for (std::size_t t = 0; t < p.frames(); ++t) {
    double s = 0.0;
    for (float v : p.probs.row(t)) {
      if (!(v >= 0.0f)) return PosteriorViolation{t, "negative or non-finite mass"};
      s += v;
    }
    if (std::abs(s - 1.0) > tol) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "row sums to %.8g", s);
      return PosteriorViolation{t, buf};
    }
  }
  return std::nullopt;
}

}  // namespace ctcbridge
