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

// Turns encoder logit-grams into pseudo-embeddings in the decoder input
// space. Every variant applies, in this order:
//
//   1. blank downscale: z[blank] -= log(blk_downscale)
//   2. temperature:     z / tau
//   3. softmax (over all outputs, or over the top-K entries of a frame)
//   4. weighted sum of codebook rows
//
// The top-K projection variant skips 2-4 and instead concatenates the K
// selected rows (highest logit first) and maps them through a trained
// [K*d, d] matrix.

#pragma once

#include <string>
#include <vector>

#include "ctcbridge/autodiff.hpp"
#include "ctcbridge/lexicon.hpp"

namespace ctcbridge {

enum class ConnectorMode { kFull, kTopS, kTopP, kAdapter };
enum class TauPhase { kInferenceOnly, kAlways };
enum class Phase { kTraining, kInference };

std::string to_string(ConnectorMode m);
ConnectorMode connector_mode_from_string(const std::string& s);

struct ConnectorConfig {
  ConnectorMode mode = ConnectorMode::kFull;
  double tau = 1.0;
  double blk_downscale = 1.0;
  int k = 0;  // topS / topP only
  TauPhase apply_tau_at = TauPhase::kInferenceOnly;

  // Temperature actually used in `phase`.
  double tau_for(Phase phase) const {
    return (phase == Phase::kInference || apply_tau_at == TauPhase::kAlways) ? tau : 1.0;
  }
  // Throws DomainError for tau <= 0, blk_downscale < 1 or a K outside
  // [1, classes] when the mode needs one.
  void validate(std::size_t classes) const;

  std::string to_json() const;
  static ConnectorConfig from_json(const std::string& text);
};

// Subtracts log(factor) from the last (blank) column only.
LogitGram blank_downscale(const LogitGram& z, double factor);

// Indices of the K largest entries of a row, highest first, ties to the
// lower index.
std::vector<int> top_k_indices(std::span<const float> row, int k);

// Frame weights for the full and top-K softmax variants: [T', V+1], zero
// outside the kept entries. Exposed for tests and inspection.
Tensor connector_weights(const LogitGram& z, const ConnectorConfig& cfg, Phase phase);

// s_t = sum_i softmax_t(downscale(z)_t / tau)[i] * codebook[i]
template <typename T>
Var<T> reconstruct_full(const LogitGram& z, Var<T> codebook, const ConnectorConfig& cfg,
                        Phase phase = Phase::kInference);

// Same sum restricted to the K largest entries of each frame.
template <typename T>
Var<T> reconstruct_top_s(const LogitGram& z, Var<T> codebook, const ConnectorConfig& cfg,
                         Phase phase = Phase::kInference);

// concat(codebook[i_t1], ..., codebook[i_tK]) * projection, projection [K*d, d].
template <typename T>
Var<T> reconstruct_top_p(const LogitGram& z, Var<T> codebook, Var<T> projection, const ConnectorConfig& cfg);

// reconstruct_full against a separate table sized for the encoder vocabulary.
template <typename T>
Var<T> reconstruct_adapter(const LogitGram& z, Var<T> adapter_table, const ConnectorConfig& cfg,
                           Phase phase = Phase::kInference);

}  // namespace ctcbridge
