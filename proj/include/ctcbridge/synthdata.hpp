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

// Synthetic spoken-language task.
//
// Sentences come from a sparse first-order Markov chain over the word tokens.
// Each word renders as a noisy repetition of a prototype feature vector; with
// probability p_conf it borrows the prototype of its confusion partner
// instead. No context row of the Markov chain allows both members of a
// pair, so the preceding word always resolves an acoustic confusion.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ctcbridge/lexicon.hpp"
#include "ctcbridge/rng.hpp"
#include "ctcbridge/tensor.hpp"

namespace ctcbridge {

struct TaskSpec {
  std::size_t vocab_size = 32;
  std::size_t feature_dim = 16;
  std::size_t min_len = 6, max_len = 14;
  std::size_t min_dur = 4, max_dur = 8;
  double noise_sigma = 0.35;
  double p_conf = 0.15;
  std::uint64_t prototype_seed = 1;
  std::uint64_t language_seed = 2;
  std::uint64_t translation_seed = 3;
  std::size_t successors = 4;
  std::size_t n_train = 4000, n_dev = 400, n_test = 400;

  // Filled by materialize() unless given explicitly in the JSON.
  std::vector<std::vector<double>> transitions;  // [V][V], row bos = start distribution
  std::vector<std::pair<int, int>> confusion_pairs;
  std::vector<int> translation_map;  // bijection on [0, V), specials fixed
  Tensor prototypes;                 // [V, F]

  Vocabulary vocab() const { return Vocabulary::synthetic(vocab_size); }
  int partner(int token) const;

  // Generates the derived tables and checks every invariant.
  void materialize();
  void validate() const;

  // Same acoustics and confusions, with every successor row replaced by a
  // uniform draw over the other words. Models trained on it cannot lean on
  // the word order of this task.
  TaskSpec context_free() const;

  // Declarative fields plus the explicit tables, so a spec written by
  // to_json reloads to the identical task.
  std::string to_json() const;
  static TaskSpec from_json(const std::string& text);
  static TaskSpec from_file(const std::string& path);

 private:
  std::vector<int> partner_;
};

struct Utterance {
  std::string id;
  Tensor frames;  // [T, F]
  TokenSeq source;
  TokenSeq target;  // translated tokens for the translation task, else == source
  std::vector<int> durations;
};

struct Dataset {
  std::string name;
  std::vector<Utterance> utts;
};

struct Splits {
  Dataset train, dev, test;
};

// Token sequence from the Markov chain; the first draw sets the length.
TokenSeq sample_sentence(const TaskSpec& spec, Rng& rng);

Utterance sample_utterance(const TaskSpec& spec, Rng rng, std::string id = {});

Splits make_splits(const TaskSpec& spec, std::size_t n_train, std::size_t n_dev, std::size_t n_test,
                   std::uint64_t seed);
inline Splits make_splits(const TaskSpec& spec, std::uint64_t seed) {
  return make_splits(spec, spec.n_train, spec.n_dev, spec.n_test, seed);
}

// Each time mask zeros floor(time_ratio * T) consecutive frames at a random
// start; each frequency mask zeros min(freq_width, F) consecutive features.
struct MaskConfig {
  int time_masks = 0;
  double time_ratio = 0.0;
  int freq_masks = 0;
  int freq_width = 0;
  bool active() const { return (time_masks > 0 && time_ratio > 0.0) || (freq_masks > 0 && freq_width > 0); }
};

Tensor augment(const Tensor& frames, const MaskConfig& cfg, Rng& rng);

// Words are mapped through the bijection, then adjacent pairs swap places.
TokenSeq translate_target(const TokenSeq& source, const std::vector<int>& mapping);
TokenSeq untranslate_target(const TokenSeq& target, const std::vector<int>& mapping);

// FNV-1a over ids, token ids and frame bytes.
std::uint64_t dataset_hash(const Dataset& d);

std::string utterance_to_jsonl(const Utterance& u);
Utterance utterance_from_jsonl(const std::string& line);

std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace ctcbridge
