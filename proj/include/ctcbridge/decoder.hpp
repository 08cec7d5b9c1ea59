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

// Decoder-only causal language model.
//
// The embedding table has V+1 rows: one per LM token plus a final row for the
// CTC blank. Input tokens are looked up in it and, when tied, output logits
// are dot products with rows 0..V-1, so the blank row is only ever reached
// through a speech prefix. Learned positions cover the concatenated
// (prefix || text) sequence.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcbridge/autodiff.hpp"
#include "ctcbridge/lexicon.hpp"
#include "ctcbridge/nn.hpp"

namespace ctcbridge {

struct DecoderConfig {
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t mlp_hidden = 128;
  std::size_t max_positions = 192;
  bool tied = true;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static DecoderConfig from_json(const std::string& text);
};

class DecoderLM {
 public:
  DecoderLM() = default;
  DecoderLM(DecoderConfig cfg, Vocabulary vocab);

  const DecoderConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t dim() const { return cfg_.dim; }

  // The [V+1, d] table shared by token lookup, reconstruction and output.
  const Parameter& embedding() const { return embed_; }
  Parameter& embedding() { return embed_; }

  // Next-token logits [len(text), V] for text conditioned on prefix
  // (which may be an invalid Var for no prefix). text must start with bos.
  template <typename T>
  Var<T> forward(BasicTape<T>& tape, Var<T> prefix, const TokenSeq& text, Rng* rng = nullptr,
                 double dropout = 0.0) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void set_trainable(bool on);

 private:
  struct Block {
    LayerNorm ln_attn, ln_mlp;
    Linear qkv, attn_out, mlp_in, mlp_out;
  };

  DecoderConfig cfg_;
  Vocabulary vocab_;
  Parameter embed_;  // [V+1, d]
  Parameter pos_;    // [max_positions, d]
  std::vector<Block> blocks_;
  LayerNorm ln_final_;
  Linear head_;  // used only when not tied
};

}  // namespace ctcbridge
