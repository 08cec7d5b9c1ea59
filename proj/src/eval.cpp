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

#include "ctcbridge/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "ctcbridge/autodiff.hpp"
#include "json.hpp"

namespace ctcbridge {

WerReport& WerReport::operator+=(const WerReport& o) {
  sub += o.sub;
  del += o.del;
  ins += o.ins;
  n_ref += o.n_ref;
  wer = n_ref ? static_cast<double>(errors()) / static_cast<double>(n_ref) : 0.0;
  return *this;
}

std::string WerReport::to_json() const {
  nlohmann::json j;
  j["wer"] = wer;
  j["sub"] = sub;
  j["del"] = del;
  j["ins"] = ins;
  j["n_ref"] = n_ref;
  return j.dump();
}

WerReport wer(const TokenSeq& ref, const TokenSeq& hyp) {
  if (ref.empty()) throw DomainError("wer: empty reference");
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<std::size_t> d((n + 1) * (m + 1));
  auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
  for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
  for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t diag = at(i - 1, j - 1) + (ref.ids[i - 1] == hyp.ids[j - 1] ? 0 : 1);
      at(i, j) = std::min({diag, at(i - 1, j) + 1, at(i, j - 1) + 1});
    }
  WerReport r;
  r.n_ref = n;
  std::size_t i = n, j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref.ids[i - 1] == hyp.ids[j - 1];
      if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
        if (!same) ++r.sub;
        --i;
        --j;
        continue;
      }
    }
    if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
      ++r.del;
      --i;
    } else {
      ++r.ins;
      --j;
    }
  }
  r.wer = static_cast<double>(r.errors()) / static_cast<double>(n);
  return r;
}

WerReport corpus_wer(const std::vector<TokenSeq>& refs, const std::vector<TokenSeq>& hyps) {
  CTCB_REQUIRE(refs.size() == hyps.size(), "corpus_wer: list lengths differ");
  WerReport total;
  for (std::size_t i = 0; i < refs.size(); ++i) total += wer(refs[i], hyps[i]);
  return total;
}

double werr(double baseline_wer, double system_wer) {
  if (!(baseline_wer > 0.0)) throw DomainError("werr: baseline WER must be positive");
  return (baseline_wer - system_wer) / baseline_wer;
}

double bleu(const std::vector<TokenSeq>& refs, const std::vector<TokenSeq>& hyps, int max_n, bool smoothing) {
  CTCB_REQUIRE(refs.size() == hyps.size(), "bleu: list lengths differ");
  if (hyps.empty()) throw DomainError("bleu: no hypotheses");
  std::vector<double> match(max_n, 0.0), total(max_n, 0.0);
  double ref_len = 0.0, hyp_len = 0.0;
  for (std::size_t s = 0; s < refs.size(); ++s) {
    const auto& r = refs[s].ids;
    const auto& h = hyps[s].ids;
    ref_len += static_cast<double>(r.size());
    hyp_len += static_cast<double>(h.size());
    for (int n = 1; n <= max_n; ++n) {
      std::map<std::vector<int>, int> rc, hc;
      for (std::size_t i = 0; i + n <= r.size(); ++i) ++rc[std::vector<int>(r.begin() + i, r.begin() + i + n)];
      for (std::size_t i = 0; i + n <= h.size(); ++i) ++hc[std::vector<int>(h.begin() + i, h.begin() + i + n)];
      for (const auto& [gram, c] : hc) {
        auto it = rc.find(gram);
        match[n - 1] += std::min(c, it == rc.end() ? 0 : it->second);
        total[n - 1] += c;
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_p = 0.0;
  for (int n = 0; n < max_n; ++n) {
    double m = match[n], t = total[n];
    if (smoothing && n > 0) {
      m += 1.0;
      t += 1.0;
    }
    if (m <= 0.0 || t <= 0.0) return 0.0;
    log_p += std::log(m / t) / static_cast<double>(max_n);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
  return 100.0 * bp * std::exp(log_p);
}

void TeacherForcingAccumulator::add(const Tensor& logits, const std::vector<int>& targets) {
  CTCB_REQUIRE(logits.rows() == targets.size(), "teacher forcing: logits rows != targets");
  for (std::size_t i = 0; i < targets.size(); ++i) {
    auto row = logits.row(i);
    const double lse = kernels::logsumexp(row);
    nll_ += lse - row[targets[i]];
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    hits_ += best == targets[i] ? 1 : 0;
    ++count_;
  }
}

TeacherForcingStats TeacherForcingAccumulator::result() const {
  if (count_ == 0) throw DomainError("teacher forcing: empty dataset");
  return {nll_ / static_cast<double>(count_), static_cast<double>(hits_) / static_cast<double>(count_), count_};
}

}  // namespace ctcbridge
