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

#include <string>
#include <vector>

#include "ctcbridge/autodiff.hpp"
#include "ctcbridge/lexicon.hpp"

namespace ctcbridge {

// Loss reported for targets that cannot fit in the available frames.
inline constexpr double kInfeasibleCtcLoss = 1e30;

template <typename T>
struct CtcLoss {
  Var<T> loss;  // scalar
  bool feasible = true;
};

// Minimum frames needed to emit y: one per label plus a separating blank
// between every pair of equal neighbours.
std::size_t ctc_min_frames(const TokenSeq& y);

// -log sum over alignments of prod_t softmax(z)_t[pi_t]. The last column of
// z is the blank. The forward/backward recursions run in double log space;
// the gradient (softmax - occupancy) is recorded on the tape. Infeasible
// targets yield kInfeasibleCtcLoss with zero gradient and feasible = false.
template <typename T>
CtcLoss<T> ctc_loss(Var<T> logits, const TokenSeq& y);

// Value-only convenience wrapper, evaluated in double precision.
double ctc_loss_value(const LogitGram& z, const TokenSeq& y, bool* feasible = nullptr);

// Every path in [0, V]^frames that collapses to y. Refuses frames > 8 or V > 4.
std::vector<Alignment> alignment_oracle(const TokenSeq& y, std::size_t frames, std::size_t vocab_size);

// Per-frame argmax (ties to the lowest index), then collapse.
TokenSeq greedy_decode(const Posteriorgram& p);

struct Hypothesis {
  TokenSeq tokens;
  double log_score = 0.0;
};

struct NBestList {
  std::vector<Hypothesis> hyps;  // descending log_score, distinct
  int beam = 0;
  int n = 0;
};

// CTC prefix beam search. Each prefix tracks blank-ending and
// non-blank-ending log mass; identical prefixes merge by log-add after every
// frame, then the set is pruned to `beam` by total mass. No length
// normalization.
NBestList beam_search(const Posteriorgram& p, int beam, int n);

// {"utt": id, "hyps": [{"tokens": [...], "logp": f}]}
std::string nbest_to_jsonl(const std::string& utt, const NBestList& list);
NBestList nbest_from_jsonl(const std::string& line, std::string* utt = nullptr);

}  // namespace ctcbridge
