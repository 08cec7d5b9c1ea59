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

#include "ctcbridge/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "json.hpp"

namespace ctcbridge {
namespace {

inline double log_add(double a, double b) {
  if (a < b) std::swap(a, b);
  if (b <= kLogZero) return a;
  return a + std::log1p(std::exp(b - a));
}

}  // namespace

std::size_t ctc_min_frames(const TokenSeq& y) {
  std::size_t n = y.size();
  for (std::size_t i = 1; i < y.size(); ++i)
    if (y.ids[i] == y.ids[i - 1]) ++n;
  return n;
}

template <typename T>
CtcLoss<T> ctc_loss(Var<T> logits, const TokenSeq& y) {
  const BasicTensor<T>& z = logits.value();
  CTCB_REQUIRE(z.rank() == 2 && z.rows() >= 1, "ctc_loss: logits must be [T', V+1] with T' >= 1");
  const std::size_t frames = z.rows(), classes = z.cols();
  const int blank = static_cast<int>(classes) - 1;
  for (int id : y.ids)
    CTCB_REQUIRE(id >= 0 && id < blank, "ctc_loss: label " + std::to_string(id) + " outside [0, V)");

  BasicTape<T>& tape = *logits.tape();
  if (ctc_min_frames(y) > frames) {
    return {tape.constant(BasicTensor<T>::scalar(static_cast<T>(kInfeasibleCtcLoss))), false};
  }

  // Log posteriors in double.
  std::vector<double> lp(frames * classes);
  for (std::size_t t = 0; t < frames; ++t) {
    const double lse = kernels::logsumexp(z.row(t));
    for (std::size_t k = 0; k < classes; ++k) lp[t * classes + k] = static_cast<double>(z(t, k)) - lse;
  }

  // Extended labels: blank, y1, blank, y2, ..., blank.
  const std::size_t s_len = 2 * y.size() + 1;
  std::vector<int> ext(s_len, blank);
  for (std::size_t i = 0; i < y.size(); ++i) ext[2 * i + 1] = y.ids[i];
  auto skip_ok = [&](std::size_t s) { return s >= 2 && ext[s] != blank && ext[s] != ext[s - 2]; };

  std::vector<double> alpha(frames * s_len, kLogZero), beta(frames * s_len, kLogZero);
  alpha[0] = lp[blank];
  if (s_len > 1) alpha[1] = lp[ext[1]];
  for (std::size_t t = 1; t < frames; ++t) {
    for (std::size_t s = 0; s < s_len; ++s) {
      double a = alpha[(t - 1) * s_len + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
      if (skip_ok(s)) a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
      alpha[t * s_len + s] = a <= kLogZero ? kLogZero : a + lp[t * classes + ext[s]];
    }
  }
  // beta excludes the emission at its own frame.
  const std::size_t last = frames - 1;
  beta[last * s_len + s_len - 1] = 0.0;
  if (s_len > 1) beta[last * s_len + s_len - 2] = 0.0;
  for (std::size_t t = last; t-- > 0;) {
    for (std::size_t s = 0; s < s_len; ++s) {
      auto term = [&](std::size_t s2) { return lp[(t + 1) * classes + ext[s2]] + beta[(t + 1) * s_len + s2]; };
      double b = term(s);
      if (s + 1 < s_len) b = log_add(b, term(s + 1));
      if (s + 2 < s_len && skip_ok(s + 2)) b = log_add(b, term(s + 2));
      beta[t * s_len + s] = b <= kLogZero / 2 ? kLogZero : b;
    }
  }
  double log_p = alpha[last * s_len + s_len - 1];
  if (s_len > 1) log_p = log_add(log_p, alpha[last * s_len + s_len - 2]);

  BasicTensor<T> grad({frames, classes});
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> occ(classes, kLogZero);
    for (std::size_t s = 0; s < s_len; ++s)
      occ[ext[s]] = log_add(occ[ext[s]], alpha[t * s_len + s] + beta[t * s_len + s]);
    for (std::size_t k = 0; k < classes; ++k) {
      const double gamma = occ[k] <= kLogZero / 2 ? 0.0 : std::exp(occ[k] - log_p);
      grad(t, k) = static_cast<T>(std::exp(lp[t * classes + k]) - gamma);
    }
  }

  Var<T> loss = tape.record(BasicTensor<T>::scalar(static_cast<T>(-log_p)), {logits},
                            [logits, grad = std::move(grad)](BasicTape<T>& t, const BasicTensor<T>& g) {
                              auto& gz = t.grad_acc(logits);
                              const double s = g[0];
                              for (std::size_t i = 0; i < grad.size(); ++i) gz[i] += static_cast<T>(s * grad[i]);
                            });
  return {loss, true};
}

template CtcLoss<float> ctc_loss<float>(Var<float>, const TokenSeq&);
template CtcLoss<double> ctc_loss<double>(Var<double>, const TokenSeq&);

double ctc_loss_value(const LogitGram& z, const TokenSeq& y, bool* feasible) {
  // Double precision throughout; the float logits widen exactly.
  BasicTape<double> tape;
  auto r = ctc_loss(tape.constant(BasicTensor<double>::cast(z.logits)), y);
  if (feasible) *feasible = r.feasible;
  return r.loss.value().item();
}

std::vector<Alignment> alignment_oracle(const TokenSeq& y, std::size_t frames, std::size_t vocab_size) {
  if (frames > 8 || vocab_size > 4) throw DomainError("alignment_oracle: guard exceeded (T' <= 8, V <= 4)");
  const std::size_t base = vocab_size + 1;
  std::size_t total = 1;
  for (std::size_t i = 0; i < frames; ++i) total *= base;
  std::vector<Alignment> out;
  Alignment a;
  a.path.assign(frames, 0);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t t = frames; t-- > 0;) {
      a.path[t] = static_cast<int>(c % base);
      c /= base;
    }
    if (collapse(a, vocab_size) == y) out.push_back(a);
  }
  return out;
}

TokenSeq greedy_decode(const Posteriorgram& p) {
  Alignment a;
  a.path.reserve(p.frames());
  for (std::size_t t = 0; t < p.frames(); ++t) {
    auto row = p.probs.row(t);
    a.path.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return collapse(a, p.classes() - 1);
}

NBestList beam_search(const Posteriorgram& p, int beam, int n) {
  CTCB_REQUIRE(n >= 1 && beam >= n, "beam_search requires beam >= n >= 1");
  struct Mass {
    double blank = kLogZero;
    double nonblank = kLogZero;
    double total() const { return log_add(blank, nonblank); }
  };
  using Prefix = std::vector<int>;
  const std::size_t classes = p.classes();
  const int blank = static_cast<int>(classes) - 1;

  auto safe_log = [](float v) { return v > 0.0f ? std::log(static_cast<double>(v)) : kLogZero; };

  std::vector<std::pair<Prefix, Mass>> beams{{Prefix{}, Mass{0.0, kLogZero}}};
  for (std::size_t t = 0; t < p.frames(); ++t) {
    std::map<Prefix, Mass> next;
    std::vector<double> lp(classes);
    for (std::size_t k = 0; k < classes; ++k) lp[k] = safe_log(p.probs(t, k));
    for (const auto& [prefix, m] : beams) {
      const double tot = m.total();
      Mass& stay = next[prefix];
      stay.blank = log_add(stay.blank, tot + lp[blank]);
      if (!prefix.empty()) stay.nonblank = log_add(stay.nonblank, m.nonblank + lp[prefix.back()]);
      for (int k = 0; k < blank; ++k) {
        if (lp[k] <= kLogZero) continue;
        Prefix ext = prefix;
        ext.push_back(k);
        Mass& e = next[ext];
        // A repeated label only extends from blank-ending mass.
        const double from = (!prefix.empty() && prefix.back() == k) ? m.blank : tot;
        e.nonblank = log_add(e.nonblank, from + lp[k]);
      }
    }
    beams.assign(next.begin(), next.end());
    // Stable sort keeps lexicographic prefix order among equal totals.
    std::stable_sort(beams.begin(), beams.end(),
                     [](const auto& a, const auto& b) { return a.second.total() > b.second.total(); });
    if (beams.size() > static_cast<std::size_t>(beam)) beams.resize(beam);
  }
  NBestList out;
  out.beam = beam;
  out.n = n;
  for (std::size_t i = 0; i < beams.size() && i < static_cast<std::size_t>(n); ++i)
    out.hyps.push_back({TokenSeq{beams[i].first}, beams[i].second.total()});
  return out;
}

std::string nbest_to_jsonl(const std::string& utt, const NBestList& list) {
  nlohmann::json j;
  j["utt"] = utt;
  j["hyps"] = nlohmann::json::array();
  for (const auto& h : list.hyps) j["hyps"].push_back({{"tokens", h.tokens.ids}, {"logp", h.log_score}});
  return j.dump();
}

NBestList nbest_from_jsonl(const std::string& line, std::string* utt) {
  try {
    auto j = nlohmann::json::parse(line);
    if (utt) *utt = j.at("utt").get<std::string>();
    NBestList out;
    for (const auto& h : j.at("hyps"))
      out.hyps.push_back({TokenSeq{h.at("tokens").get<std::vector<int>>()}, h.at("logp").get<double>()});
    out.n = static_cast<int>(out.hyps.size());
    out.beam = out.n;
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("n-best json: ") + e.what());
  }
}

}  // namespace ctcbridge
