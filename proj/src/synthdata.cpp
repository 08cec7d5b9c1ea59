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

#include "ctcbridge/synthdata.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace ctcbridge {
namespace {

template <typename V>
void shuffle(V& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
}

std::size_t words_of(const TaskSpec& s) { return s.vocab_size - 3; }

int sample_row(const std::vector<double>& row, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] <= 0.0) continue;
    acc += row[j];
    last = static_cast<int>(j);
    if (u < acc) return last;
  }
  return last;
}

void put_u64(std::uint64_t& h, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    h ^= (v >> (8 * i)) & 0xff;
    h *= 0x100000001b3ULL;
  }
}

}  // namespace

int TaskSpec::partner(int token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= partner_.size()) return -1;
  return partner_[token];
}

void TaskSpec::materialize() {
  CTCB_REQUIRE(vocab_size >= 5, "task: vocab_size must be >= 5");
  const std::size_t v = vocab_size, w = words_of(*this);
  const Vocabulary voc = vocab();
  Rng lang(language_seed);

  if (confusion_pairs.empty() && p_conf > 0.0) {
    std::vector<int> order(w);
    for (std::size_t i = 0; i < w; ++i) order[i] = static_cast<int>(i);
    shuffle(order, lang);
    for (std::size_t i = 0; i + 1 < w; i += 2)
      confusion_pairs.emplace_back(std::min(order[i], order[i + 1]), std::max(order[i], order[i + 1]));
    std::sort(confusion_pairs.begin(), confusion_pairs.end());
  }
  partner_.assign(v, -1);
  for (auto [a, b] : confusion_pairs) {
    CTCB_REQUIRE(a >= 0 && b >= 0 && static_cast<std::size_t>(a) < w && static_cast<std::size_t>(b) < w && a != b,
                 "task: confusion pair outside word range");
    CTCB_REQUIRE(partner_[a] < 0 && partner_[b] < 0, "task: token appears in two confusion pairs");
    partner_[a] = b;
    partner_[b] = a;
  }

  if (transitions.empty()) {
    // Groups: each confusion pair, plus every unpaired word on its own.
    std::vector<std::vector<int>> groups;
    std::vector<int> group_of(w, -1);
    for (std::size_t t = 0; t < w; ++t) {
      if (group_of[t] >= 0) continue;
      std::vector<int> g{static_cast<int>(t)};
      if (partner_[t] >= 0) g.push_back(partner_[t]);
      for (int m : g) group_of[m] = static_cast<int>(groups.size());
      groups.push_back(std::move(g));
    }
    transitions.assign(v, std::vector<double>(v, 0.0));
    for (std::size_t r = 0; r < v; ++r) {
      const bool word = r < w;
      const bool start = static_cast<int>(r) == voc.bos_id();
      if (!word && !start) {
        for (std::size_t j = 0; j < w; ++j) transitions[r][j] = 1.0 / static_cast<double>(w);
        continue;
      }
      std::vector<int> cand;
      for (std::size_t g = 0; g < groups.size(); ++g)
        if (!word || static_cast<int>(g) != group_of[r]) cand.push_back(static_cast<int>(g));
      shuffle(cand, lang);
      const std::size_t take = std::min(successors, cand.size());
      double total = 0.0;
      for (std::size_t i = 0; i < take; ++i) {
        const auto& g = groups[cand[i]];
        const int member = g[lang.below(g.size())];
        const double wgt = 0.5 + lang.uniform();
        transitions[r][member] += wgt;
        total += wgt;
      }
      for (auto& x : transitions[r]) x /= total;
    }
  }

  if (translation_map.empty()) {
    Rng tr(translation_seed);
    translation_map.resize(v);
    std::vector<int> perm(w);
    for (std::size_t i = 0; i < w; ++i) perm[i] = static_cast<int>(i);
    shuffle(perm, tr);
    for (std::size_t i = 0; i < w; ++i) translation_map[i] = perm[i];
    for (std::size_t i = w; i < v; ++i) translation_map[i] = static_cast<int>(i);
  }

  Rng proto(prototype_seed);
  prototypes = Tensor({v, feature_dim});
  for (auto& x : prototypes.values()) x = static_cast<float>(proto.normal());

  validate();
}

TaskSpec TaskSpec::context_free() const {
  TaskSpec out = *this;
  const std::size_t v = vocab_size;
  const std::size_t w = v - 3;
  for (std::size_t r = 0; r < v; ++r) {
    const bool word = r < w;
    for (std::size_t j = 0; j < v; ++j)
      out.transitions[r][j] = (j < w && !(word && j == r)) ? 1.0 / static_cast<double>(word ? w - 1 : w) : 0.0;
  }
  out.validate();
  return out;
}

void TaskSpec::validate() const {
  const std::size_t v = vocab_size;
  if (min_len < 1 || min_len > max_len) throw DomainError("task: need 1 <= min_len <= max_len");
  if (min_dur < 4 || min_dur > max_dur) throw DomainError("task: need 4 <= min_dur <= max_dur");
  if (!(p_conf >= 0.0 && p_conf < 0.5)) throw DomainError("task: p_conf must lie in [0, 0.5)");
  if (!(noise_sigma >= 0.0)) throw DomainError("task: noise_sigma must be >= 0");
  if (feature_dim < 1) throw DomainError("task: feature_dim must be >= 1");
  CTCB_REQUIRE(transitions.size() == v, "task: transition matrix must be V x V");
  for (const auto& row : transitions) {
    CTCB_REQUIRE(row.size() == v, "task: transition matrix must be V x V");
    double s = 0.0;
    for (double x : row) {
      if (x < 0.0) throw DomainError("task: negative transition probability");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw DomainError("task: transition rows must sum to 1");
  }
  CTCB_REQUIRE(translation_map.size() == v, "task: translation map must cover [0, V)");
  std::vector<int> seen(v, 0);
  for (int m : translation_map) {
    CTCB_REQUIRE(m >= 0 && static_cast<std::size_t>(m) < v && !seen[m]++, "task: translation map is not a bijection");
  }
}

std::string TaskSpec::to_json() const {
  nlohmann::json j;
  j["vocab_size"] = vocab_size;
  j["feature_dim"] = feature_dim;
  j["min_len"] = min_len;
  j["max_len"] = max_len;
  j["min_dur"] = min_dur;
  j["max_dur"] = max_dur;
  j["noise_sigma"] = noise_sigma;
  j["p_conf"] = p_conf;
  j["prototype_seed"] = prototype_seed;
  j["language_seed"] = language_seed;
  j["translation_seed"] = translation_seed;
  j["successors"] = successors;
  j["n_train"] = n_train;
  j["n_dev"] = n_dev;
  j["n_test"] = n_test;
  j["transitions"] = transitions;
  nlohmann::json pairs = nlohmann::json::array();
  for (auto [a, b] : confusion_pairs) pairs.push_back({a, b});
  j["confusion_pairs"] = pairs;
  j["translation_map"] = translation_map;
  return j.dump();
}

TaskSpec TaskSpec::from_json(const std::string& text) {
  TaskSpec s;
  try {
    auto j = nlohmann::json::parse(text);
    s.vocab_size = j.value("vocab_size", s.vocab_size);
    s.feature_dim = j.value("feature_dim", s.feature_dim);
    s.min_len = j.value("min_len", s.min_len);
    s.max_len = j.value("max_len", s.max_len);
    s.min_dur = j.value("min_dur", s.min_dur);
    s.max_dur = j.value("max_dur", s.max_dur);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.p_conf = j.value("p_conf", s.p_conf);
    s.prototype_seed = j.value("prototype_seed", s.prototype_seed);
    s.language_seed = j.value("language_seed", s.language_seed);
    s.translation_seed = j.value("translation_seed", s.translation_seed);
    s.successors = j.value("successors", s.successors);
    s.n_train = j.value("n_train", s.n_train);
    s.n_dev = j.value("n_dev", s.n_dev);
    s.n_test = j.value("n_test", s.n_test);
    if (j.contains("transitions")) s.transitions = j["transitions"].get<std::vector<std::vector<double>>>();
    if (j.contains("confusion_pairs"))
      for (const auto& p : j["confusion_pairs"]) s.confusion_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    if (j.contains("translation_map")) s.translation_map = j["translation_map"].get<std::vector<int>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("task spec json: ") + e.what());
  }
  s.materialize();
  return s;
}

TaskSpec TaskSpec::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task spec '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

TokenSeq sample_sentence(const TaskSpec& spec, Rng& rng) {
  TokenSeq out;
  const long len = rng.range(static_cast<long>(spec.min_len), static_cast<long>(spec.max_len));
  int prev = spec.vocab().bos_id();
  for (long i = 0; i < len; ++i) {
    prev = sample_row(spec.transitions[prev], rng);
    out.ids.push_back(prev);
  }
  return out;
}

Utterance sample_utterance(const TaskSpec& spec, Rng rng, std::string id) {
  Utterance u;
  u.id = std::move(id);
  u.source = sample_sentence(spec, rng);
  const std::size_t f = spec.feature_dim;
  std::vector<float> data;
  for (int tok : u.source.ids) {
    int shown = tok;
    const int other = spec.partner(tok);
    if (other >= 0 && rng.uniform() < spec.p_conf) shown = other;
    const int dur = static_cast<int>(rng.range(static_cast<long>(spec.min_dur), static_cast<long>(spec.max_dur)));
    u.durations.push_back(dur);
    for (int d = 0; d < dur; ++d)
      for (std::size_t k = 0; k < f; ++k)
        data.push_back(static_cast<float>(spec.prototypes(shown, k) + spec.noise_sigma * rng.normal()));
  }
  const std::size_t t = data.size() / f;
  u.frames = Tensor({t, f}, std::move(data));
  u.target = u.source;
  return u;
}

Splits make_splits(const TaskSpec& spec, std::size_t n_train, std::size_t n_dev, std::size_t n_test,
                   std::uint64_t seed) {
  CTCB_REQUIRE(n_train >= 1 && n_dev >= 1 && n_test >= 1, "make_splits: sizes must be >= 1");
  const Rng root(seed);
  auto build = [&](const char* name, std::uint64_t stream, std::size_t n) {
    Dataset d;
    d.name = name;
    const Rng split = root.split(stream);
    d.utts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      char id[64];
      std::snprintf(id, sizeof id, "%s-s%llu-%05zu", name, static_cast<unsigned long long>(seed), i);
      d.utts.push_back(sample_utterance(spec, split.split(i), id));
    }
    return d;
  };
  return Splits{build("train", 0, n_train), build("dev", 1, n_dev), build("test", 2, n_test)};
}

Tensor augment(const Tensor& frames, const MaskConfig& cfg, Rng& rng) {
  Tensor out = frames;
  const std::size_t t = frames.rows(), f = frames.cols();
  const auto span = static_cast<std::size_t>(std::floor(cfg.time_ratio * static_cast<double>(t)));
  for (int m = 0; m < cfg.time_masks && span > 0; ++m) {
    const std::size_t len = std::min(span, t);
    const std::size_t start = rng.below(t - len + 1);
    for (std::size_t i = start; i < start + len; ++i)
      for (std::size_t k = 0; k < f; ++k) out(i, k) = 0.0f;
  }
  const std::size_t band = std::min<std::size_t>(static_cast<std::size_t>(std::max(cfg.freq_width, 0)), f);
  for (int m = 0; m < cfg.freq_masks && band > 0; ++m) {
    const std::size_t start = rng.below(f - band + 1);
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t k = start; k < start + band; ++k) out(i, k) = 0.0f;
  }
  return out;
}

TokenSeq translate_target(const TokenSeq& source, const std::vector<int>& mapping) {
  TokenSeq out;
  out.ids.reserve(source.size());
  for (int id : source.ids) {
    CTCB_REQUIRE(id >= 0 && static_cast<std::size_t>(id) < mapping.size(), "translate: token out of range");
    out.ids.push_back(mapping[id]);
  }
  for (std::size_t i = 0; i + 1 < out.ids.size(); i += 2) std::swap(out.ids[i], out.ids[i + 1]);
  return out;
}

TokenSeq untranslate_target(const TokenSeq& target, const std::vector<int>& mapping) {
  std::vector<int> inverse(mapping.size());
  for (std::size_t i = 0; i < mapping.size(); ++i) inverse[mapping[i]] = static_cast<int>(i);
  TokenSeq swapped = target;
  for (std::size_t i = 0; i + 1 < swapped.ids.size(); i += 2) std::swap(swapped.ids[i], swapped.ids[i + 1]);
  for (int& id : swapped.ids) id = inverse.at(id);
  return swapped;
}

std::uint64_t dataset_hash(const Dataset& d) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& u : d.utts) {
    for (char c : u.id) put_u64(h, static_cast<unsigned char>(c));
    for (int id : u.source.ids) put_u64(h, static_cast<std::uint64_t>(id));
    put_u64(h, 0xffff);
    for (int id : u.target.ids) put_u64(h, static_cast<std::uint64_t>(id));
    for (float x : u.frames.values()) put_u64(h, std::bit_cast<std::uint32_t>(x));
  }
  return h;
}

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (std::size_t i = 0; i < bytes.size(); i += 3) {
    std::uint32_t n = static_cast<std::uint32_t>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) n |= static_cast<std::uint32_t>(bytes[i + 1]) << 8;
    if (i + 2 < bytes.size()) n |= bytes[i + 2];
    out += kAlphabet[(n >> 18) & 63];
    out += kAlphabet[(n >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(n >> 6) & 63] : '=';
    out += i + 2 < bytes.size() ? kAlphabet[n & 63] : '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    return -1;
  };
  if (text.size() % 4 != 0) throw FormatError("base64: length not a multiple of 4");
  std::vector<unsigned char> out;
  for (std::size_t i = 0; i < text.size(); i += 4) {
    std::uint32_t n = 0;
    int pad = 0;
    for (int k = 0; k < 4; ++k) {
      const char c = text[i + k];
      int v = 0;
      if (c == '=') {
        ++pad;
      } else {
        v = val(c);
        if (v < 0 || pad) throw FormatError("base64: invalid character");
      }
      n = (n << 6) | static_cast<std::uint32_t>(v);
    }
    out.push_back(static_cast<unsigned char>(n >> 16));
    if (pad < 2) out.push_back(static_cast<unsigned char>((n >> 8) & 0xff));
    if (pad < 1) out.push_back(static_cast<unsigned char>(n & 0xff));
  }
  return out;
}

std::string utterance_to_jsonl(const Utterance& u) {
  std::vector<unsigned char> bytes;
  bytes.reserve(u.frames.size() * 4);
  for (float x : u.frames.values()) {
    const std::uint32_t b = std::bit_cast<std::uint32_t>(x);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((b >> (8 * i)) & 0xff));
  }
  nlohmann::json j;
  j["id"] = u.id;
  j["src"] = u.source.ids;
  j["tgt"] = u.target.ids;
  j["frames_b64"] = base64_encode(bytes);
  j["T"] = u.frames.rows();
  j["F"] = u.frames.cols();
  return j.dump();
}

Utterance utterance_from_jsonl(const std::string& line) {
  try {
    auto j = nlohmann::json::parse(line);
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.source.ids = j.at("src").get<std::vector<int>>();
    u.target.ids = j.at("tgt").get<std::vector<int>>();
    const auto t = j.at("T").get<std::size_t>(), f = j.at("F").get<std::size_t>();
    const auto bytes = base64_decode(j.at("frames_b64").get<std::string>());
    if (bytes.size() != t * f * 4) throw FormatError("utterance: frame payload does not match T x F");
    std::vector<float> data(t * f);
    for (std::size_t i = 0; i < data.size(); ++i) {
      std::uint32_t b = 0;
      for (int k = 0; k < 4; ++k) b |= static_cast<std::uint32_t>(bytes[4 * i + k]) << (8 * k);
      data[i] = std::bit_cast<float>(b);
    }
    u.frames = Tensor({t, f}, std::move(data));
    return u;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("utterance json: ") + e.what());
  }
}

}  // namespace ctcbridge
