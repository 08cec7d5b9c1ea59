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

#include <cstddef>
#include <string>
#include <vector>

#include "ctcbridge/lexicon.hpp"

namespace ctcbridge {

// Error rate on token ids with its edit decomposition.
struct WerReport {
  double wer = 0.0;
  std::size_t sub = 0, del = 0, ins = 0;
  std::size_t n_ref = 0;

  std::size_t errors() const { return sub + del + ins; }
  WerReport& operator+=(const WerReport& o);
  // {"wer":..., "sub":..., "del":..., "ins":..., "n_ref":...}
  std::string to_json() const;
};

// Unit-cost Levenshtein alignment. Among minimal alignments the backtrace
// prefers substitution/match, then deletion, then insertion.
// Throws DomainError for an empty reference.
WerReport wer(const TokenSeq& ref, const TokenSeq& hyp);

// Corpus-level: errors and reference lengths pooled in input order.
WerReport corpus_wer(const std::vector<TokenSeq>& refs, const std::vector<TokenSeq>& hyps);

// (baseline - system) / baseline; DomainError when baseline <= 0.
double werr(double baseline_wer, double system_wer);

// Corpus BLEU in [0, 100]: geometric mean of clipped n-gram precisions times
// exp(min(0, 1 - ref_len / hyp_len)). Without smoothing any zero precision
// gives 0; with smoothing, orders n > 1 use add-one counts.
double bleu(const std::vector<TokenSeq>& refs, const std::vector<TokenSeq>& hyps, int max_n = 4,
            bool smoothing = false);

struct TeacherForcingStats {
  double log_ppl = 0.0;    // mean NLL per target token (nats)
  double token_acc = 0.0;  // fraction of argmax hits
  std::size_t tokens = 0;
};

// Accumulates stats from per-utterance next-token logits [L, V] and
// targets of length L.
class TeacherForcingAccumulator {
 public:
  void add(const Tensor& logits, const std::vector<int>& targets);
  TeacherForcingStats result() const;

 private:
  double nll_ = 0.0;
  std::size_t hits_ = 0, count_ = 0;
};

}  // namespace ctcbridge
