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

// Speech encoder with a CTC output layer.
//
// Two stride-2 subsampling stages (kernel 3, zero padded) reduce T frames to
// ceil(T/4). Each mixing block applies a per-frame MLP and a single-head
// self-attention layer, each wrapped as LN(x + f(x)). There are no position
// features, so identical input frames give identical output rows.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcbridge/autodiff.hpp"
#include "ctcbridge/lexicon.hpp"
#include "ctcbridge/nn.hpp"

namespace ctcbridge {

struct EncoderConfig {
  std::size_t input_dim = 16;
  std::size_t hidden = 64;
  std::size_t mlp_hidden = 128;
  std::size_t blocks = 1;
  std::uint64_t seed = 0;  // initialization stream

  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);
};

class SpeechEncoder {
 public:
  static constexpr std::size_t kSubsample = 4;

  SpeechEncoder() = default;
  SpeechEncoder(EncoderConfig cfg, Vocabulary vocab);

  const EncoderConfig& config() const { return cfg_; }
  const Vocabulary& vocab() const { return vocab_; }
  std::size_t classes() const { return vocab_.size() + 1; }
  static std::size_t output_frames(std::size_t t) { return (t + kSubsample - 1) / kSubsample; }

  // Hidden states [ceil(T/4), hidden]. Dropout on the block residual
  // branches is applied only on training tapes with an rng.
  template <typename T>
  Var<T> hidden(BasicTape<T>& tape, const BasicTensor<T>& frames, Rng* rng = nullptr, double dropout = 0.0) const;

  // Logits [ceil(T/4), V+1]; the last column is the blank.
  template <typename T>
  Var<T> forward(BasicTape<T>& tape, const BasicTensor<T>& frames, Rng* rng = nullptr, double dropout = 0.0) const;

  // Inference helpers on a private no-grad tape.
  LogitGram encode(const Tensor& frames) const;
  Tensor encode_hidden(const Tensor& frames) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void set_trainable(bool on);
  std::uint64_t hash() const { return parameter_hash(parameters()); }

 private:
  struct Block {
    Linear mlp_in, mlp_out, qkv, attn_out;
    LayerNorm ln_mlp, ln_attn;
  };

  EncoderConfig cfg_;
  Vocabulary vocab_;
  Linear sub1_, sub2_;
  std::vector<Block> blocks_;
  Linear out_;
};

}  // namespace ctcbridge
