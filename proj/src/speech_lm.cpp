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

#include "ctcbridge/speech_lm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace ctcbridge {

std::string to_string(AdaptMode m) {
  switch (m) {
    case AdaptMode::kLego: return "lego";
    case AdaptMode::kLegoStar: return "lego_star";
    case AdaptMode::kTopS: return "topS";
    case AdaptMode::kTopP: return "topP";
    case AdaptMode::kAdapter: return "adapter";
    case AdaptMode::kSp: return "sp";
    case AdaptMode::kAec: return "aec";
    case AdaptMode::kText: return "text";
  }
  return "lego";
}

AdaptMode adapt_mode_from_string(const std::string& s) {
  static const std::pair<const char*, AdaptMode> kNames[] = {
      {"lego", AdaptMode::kLego}, {"lego_star", AdaptMode::kLegoStar}, {"topS", AdaptMode::kTopS},
      {"topP", AdaptMode::kTopP}, {"adapter", AdaptMode::kAdapter},    {"sp", AdaptMode::kSp},
      {"aec", AdaptMode::kAec},   {"text", AdaptMode::kText}};
  for (const auto& [name, m] : kNames)
    if (s == name) return m;
  throw DomainError("unknown adaptation mode '" + s + "' (expected lego, lego_star, topS, topP, adapter, sp, aec, text)");
}

ConnectorConfig connector_for_mode(AdaptMode mode, ConnectorConfig c) {
  switch (mode) {
    case AdaptMode::kLego: c.mode = ConnectorMode::kFull; break;
    case AdaptMode::kLegoStar:
      c.mode = ConnectorMode::kFull;
      c.blk_downscale = kLegoStarDownscale;
      break;
    case AdaptMode::kTopS: c.mode = ConnectorMode::kTopS; break;
    case AdaptMode::kTopP: c.mode = ConnectorMode::kTopP; break;
    case AdaptMode::kAdapter: c.mode = ConnectorMode::kAdapter; break;
    default: break;
  }
  return c;
}

TokenSeq aec_build_input(const NBestList& nbest, int n, const Vocabulary& vocab) {
  CTCB_REQUIRE(!nbest.hyps.empty(), "aec_build_input: empty n-best list");
  CTCB_REQUIRE(n >= 1, "aec_build_input: n must be at least 1");
  CTCB_REQUIRE(static_cast<std::size_t>(n) <= nbest.hyps.size(),
               "aec_build_input: requested " + std::to_string(n) + " hypotheses, list has " +
                   std::to_string(nbest.hyps.size()));
  TokenSeq out;
  for (int i = 0; i < n; ++i) {
    if (i > 0) out.ids.push_back(vocab.sep_id());
    const auto& h = nbest.hyps[i].tokens.ids;
    out.ids.insert(out.ids.end(), h.begin(), h.end());
  }
  return out;
}

TokenSeq aec_stream(const NBestList& nbest, int n, const Vocabulary& vocab) {
  const int m = std::min<int>(n, static_cast<int>(nbest.hyps.size()));
  TokenSeq joined = aec_build_input(nbest, m, vocab);
  TokenSeq out;
  out.ids.reserve(joined.size() + 2);
  out.ids.push_back(vocab.bos_id());
  out.ids.insert(out.ids.end(), joined.ids.begin(), joined.ids.end());
  out.ids.push_back(vocab.eos_id());
  return out;
}

template <typename T>
Var<T> sp_project(Var<T> h, Var<T> w_p) {
  CTCB_REQUIRE(h.value().rank() == 2 && w_p.value().rank() == 2 && h.cols() == w_p.rows(),
               "sp_project: shapes " + shape_str(h.shape()) + " and " + shape_str(w_p.shape()) + " do not agree");
  return ad::matmul(h, w_p);
}

template Var<float> sp_project(Var<float>, Var<float>);
template Var<double> sp_project(Var<double>, Var<double>);

std::string SpeechLMConfig::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["connector"] = nlohmann::json::parse(connector.to_json());
  j["decoder"] = nlohmann::json::parse(decoder.to_json());
  j["encoder_classes"] = encoder_classes;
  j["encoder_hidden"] = encoder_hidden;
  j["aec_n"] = aec_n;
  return j.dump();
}

SpeechLMConfig SpeechLMConfig::from_json(const std::string& text) {
  SpeechLMConfig c;
  try {
    auto j = nlohmann::json::parse(text);
    c.mode = adapt_mode_from_string(j.value("mode", std::string("lego")));
    if (j.contains("connector")) c.connector = ConnectorConfig::from_json(j["connector"].dump());
    if (j.contains("decoder")) c.decoder = DecoderConfig::from_json(j["decoder"].dump());
    c.encoder_classes = j.value("encoder_classes", c.encoder_classes);
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.aec_n = j.value("aec_n", c.aec_n);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("speech lm config: ") + e.what());
  }
  return c;
}

SpeechLM::SpeechLM(SpeechLMConfig cfg, Vocabulary vocab) : cfg_(std::move(cfg)), decoder_(cfg_.decoder, std::move(vocab)) {
  cfg_.connector = connector_for_mode(cfg_.mode, cfg_.connector);
  const std::size_t d = cfg_.decoder.dim;
  Rng root = Rng(cfg_.decoder.seed).split(0x42524447);
  switch (cfg_.mode) {
    case AdaptMode::kTopP: {
      cfg_.connector.validate(decoder_.vocab().size() + 1);
      const std::size_t kd = static_cast<std::size_t>(cfg_.connector.k) * d;
      projection_ = Parameter("bridge.projection", random_normal({kd, d}, 1.0 / std::sqrt(static_cast<double>(kd)), root.split(1)));
      break;
    }
    case AdaptMode::kAdapter:
      CTCB_REQUIRE(cfg_.encoder_classes >= 2, "adapter mode needs encoder_classes");
      adapter_ = Parameter("bridge.adapter",
                           random_normal({cfg_.encoder_classes, d}, 1.0 / std::sqrt(static_cast<double>(d)), root.split(2)));
      break;
    case AdaptMode::kSp:
      CTCB_REQUIRE(cfg_.encoder_hidden >= 1, "sp mode needs encoder_hidden");
      sp_proj_ = Parameter("bridge.sp_proj", random_normal({cfg_.encoder_hidden, d},
                                                          1.0 / std::sqrt(static_cast<double>(cfg_.encoder_hidden)),
                                                          root.split(3)));
      break;
    case AdaptMode::kAec: CTCB_REQUIRE(cfg_.aec_n >= 1, "aec mode needs aec_n >= 1"); break;
    default: break;
  }
  const std::size_t classes = cfg_.mode == AdaptMode::kAdapter ? cfg_.encoder_classes : decoder_.vocab().size() + 1;
  cfg_.connector.validate(classes);
}

void SpeechLM::set_connector(const ConnectorConfig& c) {
  ConnectorConfig next = c;
  next.mode = cfg_.connector.mode;
  if (cfg_.mode == AdaptMode::kTopP)
    CTCB_REQUIRE(next.k == cfg_.connector.k, "topP: K is fixed by the trained projection");
  const std::size_t classes = cfg_.mode == AdaptMode::kAdapter ? cfg_.encoder_classes : decoder_.vocab().size() + 1;
  next.validate(classes);
  cfg_.connector = next;
}

void SpeechLM::load_decoder(const DecoderLM& lm) {
  CTCB_REQUIRE(lm.vocab() == decoder_.vocab(), "load_decoder: vocabulary mismatch");
  auto dst = decoder_.parameters();
  auto src = lm.parameters();
  CTCB_REQUIRE(dst.size() == src.size(), "load_decoder: parameter count mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    CTCB_REQUIRE(dst[i]->name == src[i]->name && dst[i]->value.shape() == src[i]->value.shape(),
                 "load_decoder: parameter layout mismatch at " + dst[i]->name);
    dst[i]->value = src[i]->value;
  }
}

template <typename T>
Var<T> SpeechLM::prefix(BasicTape<T>& tape, const SpeechInputs& in, Phase phase) const {
  const ConnectorConfig& c = cfg_.connector;
  switch (cfg_.mode) {
    case AdaptMode::kLego:
    case AdaptMode::kLegoStar: return reconstruct_full(in.logits, tape.param(decoder_.embedding()), c, phase);
    case AdaptMode::kTopS: return reconstruct_top_s(in.logits, tape.param(decoder_.embedding()), c, phase);
    case AdaptMode::kTopP:
      return reconstruct_top_p(in.logits, tape.param(decoder_.embedding()), tape.param(projection_), c);
    case AdaptMode::kAdapter: return reconstruct_adapter(in.logits, tape.param(adapter_), c, phase);
    case AdaptMode::kSp:
      CTCB_REQUIRE(in.hidden.rank() == 2, "sp mode: missing encoder hidden states");
      return sp_project(tape.constant(BasicTensor<T>::cast(in.hidden)), tape.param(sp_proj_));
    case AdaptMode::kAec: {
      CTCB_REQUIRE(!in.aec_stream.empty(), "aec mode: missing n-best token stream");
      return ad::gather_rows(tape.param(decoder_.embedding()), in.aec_stream.ids);
    }
    case AdaptMode::kText: return Var<T>();
  }
  return Var<T>();
}

TokenSeq SpeechLM::framed_input(const Vocabulary& v, const TokenSeq& target) {
  TokenSeq in;
  in.ids.reserve(target.size() + 1);
  in.ids.push_back(v.bos_id());
  in.ids.insert(in.ids.end(), target.ids.begin(), target.ids.end());
  return in;
}

std::vector<int> SpeechLM::framed_targets(const Vocabulary& v, const TokenSeq& target) {
  std::vector<int> out(target.ids);
  out.push_back(v.eos_id());
  return out;
}

template <typename T>
Var<T> SpeechLM::loss(BasicTape<T>& tape, const SpeechInputs& in, const TokenSeq& target, Phase phase, Rng* rng,
                      double dropout) const {
  Var<T> pre = prefix(tape, in, phase);
  Var<T> logits = decoder_.forward(tape, pre, framed_input(vocab(), target), rng, dropout);
  return ad::cross_entropy(logits, framed_targets(vocab(), target), ad::Reduction::kSum);
}

Tensor SpeechLM::teacher_forced_logits(const SpeechInputs& in, const TokenSeq& target) const {
  Tape tape;
  tape.no_grad = true;
  Var<float> pre = prefix(tape, in, Phase::kInference);
  return decoder_.forward(tape, pre, framed_input(vocab(), target)).value();
}

TokenSeq SpeechLM::generate(const SpeechInputs& in, const GenerateOptions& opts) const {
  CTCB_REQUIRE(opts.max_len >= 1, "generate: max_len must be at least 1");
  CTCB_REQUIRE(opts.beam >= 1, "generate: beam must be at least 1");
  const Vocabulary& v = vocab();
  Tensor pre_value;
  {
    Tape tape;
    tape.no_grad = true;
    Var<float> pre = prefix(tape, in, Phase::kInference);
    if (pre.valid()) pre_value = pre.value();
  }
  const std::size_t p = pre_value.rank() == 2 ? pre_value.rows() : 0;
  const std::size_t room = decoder_.config().max_positions - p;
  CTCB_REQUIRE(room >= 1, "generate: prefix fills the context window");
  const std::size_t max_len = std::min(opts.max_len, room);

  // Log-probabilities of the next token after `text`.
  auto next_logp = [&](const TokenSeq& text) {
    Tape tape;
    tape.no_grad = true;
    Var<float> pre = p > 0 ? tape.constant(pre_value) : Var<float>();
    Tensor logits = decoder_.forward(tape, pre, text).value();
    auto last = logits.row(logits.rows() - 1);
    const double lse = kernels::logsumexp(std::span<const float>(last.data(), last.size()));
    std::vector<double> lp(last.size());
    for (std::size_t i = 0; i < last.size(); ++i) lp[i] = static_cast<double>(last[i]) - lse;
    return lp;
  };

  struct Hyp {
    TokenSeq text;  // starts with bos
    double score = 0.0;
  };
  std::vector<Hyp> live{{framed_input(v, TokenSeq{}), 0.0}};
  std::vector<Hyp> done;
  for (std::size_t step = 0; step < max_len && !live.empty(); ++step) {
    struct Cand {
      double score;
      std::size_t hyp;
      int token;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const auto lp = next_logp(live[h].text);
      for (std::size_t t = 0; t < lp.size(); ++t) cands.push_back({live[h].score + lp[t], h, static_cast<int>(t)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    std::vector<Hyp> next;
    const std::size_t keep = std::min(cands.size(), static_cast<std::size_t>(opts.beam));
    for (std::size_t i = 0; i < keep; ++i) {
      const Cand& c = cands[i];
      Hyp h = live[c.hyp];
      h.score = c.score;
      if (c.token == v.eos_id()) {
        done.push_back(std::move(h));
      } else {
        h.text.ids.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    // Scores only fall, so a finished hypothesis above every live one wins.
    if (!done.empty()) {
      const double best_done =
          std::max_element(done.begin(), done.end(), [](const Hyp& a, const Hyp& b) { return a.score < b.score; })->score;
      const bool beaten = std::all_of(live.begin(), live.end(), [&](const Hyp& h) { return h.score <= best_done; });
      if (beaten) break;
    }
  }
  const std::vector<Hyp>& pool = done.empty() ? live : done;
  const Hyp* best = &pool.front();
  for (const Hyp& h : pool)
    if (h.score > best->score) best = &h;
  TokenSeq out;
  out.ids.assign(best->text.ids.begin() + 1, best->text.ids.end());
  return out;
}

std::vector<Parameter*> SpeechLM::parameters() {
  std::vector<Parameter*> ps = decoder_.parameters();
  for (Parameter* extra : {&projection_, &adapter_, &sp_proj_})
    if (extra->value.size() > 0) ps.push_back(extra);
  return ps;
}

std::vector<const Parameter*> SpeechLM::parameters() const {
  auto ps = const_cast<SpeechLM*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

template Var<float> SpeechLM::prefix(BasicTape<float>&, const SpeechInputs&, Phase) const;
template Var<double> SpeechLM::prefix(BasicTape<double>&, const SpeechInputs&, Phase) const;
template Var<float> SpeechLM::loss(BasicTape<float>&, const SpeechInputs&, const TokenSeq&, Phase, Rng*, double) const;
template Var<double> SpeechLM::loss(BasicTape<double>&, const SpeechInputs&, const TokenSeq&, Phase, Rng*,
                                    double) const;

}  // namespace ctcbridge
