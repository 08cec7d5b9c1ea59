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

// A decoder plus whatever turns encoder output into its prefix.
//
//   lego, lego_star  posterior-weighted sum of embedding rows
//   topS, topP       the same restricted to the K best classes per frame
//   adapter          posterior-weighted sum of a separate table sized for
//                    the encoder vocabulary
//   sp               encoder hidden states through a linear projection
//   aec              embedded token stream bos || hyp1 <sep> ... || eos
//   text             no prefix at all (plain language model)

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctcbridge/connector.hpp"
#include "ctcbridge/ctc.hpp"
#include "ctcbridge/decoder.hpp"

namespace ctcbridge {

enum class AdaptMode { kLego, kLegoStar, kTopS, kTopP, kAdapter, kSp, kAec, kText };

std::string to_string(AdaptMode m);
// Throws DomainError for an unknown name.
AdaptMode adapt_mode_from_string(const std::string& s);

inline constexpr double kLegoStarDownscale = 1e4;

// Connector settings implied by a mode; lego_star fixes blk_downscale.
ConnectorConfig connector_for_mode(AdaptMode mode, ConnectorConfig base);

// Per-utterance encoder output in the form the mode consumes.
struct SpeechInputs {
  LogitGram logits;    // lego, lego_star, topS, topP, adapter
  Tensor hidden;       // sp
  TokenSeq aec_stream; // aec: already framed with bos/eos
};

// hyp_1 <sep> hyp_2 ... <sep> hyp_n in list order.
TokenSeq aec_build_input(const NBestList& nbest, int n, const Vocabulary& vocab);

// bos || hyp_1 <sep> ... hyp_m || eos with m = min(n, list size): the
// prefix fed to the decoder in aec mode.
TokenSeq aec_stream(const NBestList& nbest, int n, const Vocabulary& vocab);

template <typename T>
Var<T> sp_project(Var<T> h, Var<T> w_p);

struct GenerateOptions {
  std::size_t max_len = 24;
  int beam = 1;  // 1 is greedy
};

struct SpeechLMConfig {
  AdaptMode mode = AdaptMode::kLego;
  ConnectorConfig connector;
  DecoderConfig decoder;
  std::size_t encoder_classes = 0;  // adapter rows
  std::size_t encoder_hidden = 0;   // sp projection rows
  int aec_n = 4;

  std::string to_json() const;
  static SpeechLMConfig from_json(const std::string& text);
};

class SpeechLM {
 public:
  SpeechLM() = default;
  SpeechLM(SpeechLMConfig cfg, Vocabulary vocab);

  const SpeechLMConfig& config() const { return cfg_; }
  AdaptMode mode() const { return cfg_.mode; }
  const Vocabulary& vocab() const { return decoder_.vocab(); }
  DecoderLM& decoder() { return decoder_; }
  const DecoderLM& decoder() const { return decoder_; }

  // Connector knobs that may change between adaptation and inference.
  void set_connector(const ConnectorConfig& c);

  // Swaps in the weights of a pretrained LM with a matching config.
  void load_decoder(const DecoderLM& lm);

  // Prefix [P, d] for this mode; invalid Var for text mode.
  template <typename T>
  Var<T> prefix(BasicTape<T>& tape, const SpeechInputs& in, Phase phase) const;

  // Summed next-token cross-entropy of target || eos given bos || target.
  template <typename T>
  Var<T> loss(BasicTape<T>& tape, const SpeechInputs& in, const TokenSeq& target, Phase phase, Rng* rng = nullptr,
              double dropout = 0.0) const;

  // Teacher-forced logits [len(target)+1, V] at inference settings.
  Tensor teacher_forced_logits(const SpeechInputs& in, const TokenSeq& target) const;

  // Autoregressive decode until eos or max_len tokens. The result excludes
  // bos and eos.
  TokenSeq generate(const SpeechInputs& in, const GenerateOptions& opts) const;

  // Decoder weights followed by the mode's projection or adapter table.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  static TokenSeq framed_input(const Vocabulary& v, const TokenSeq& target);
  static std::vector<int> framed_targets(const Vocabulary& v, const TokenSeq& target);

 private:
  SpeechLMConfig cfg_;
  DecoderLM decoder_;
  Parameter projection_;  // topP [K*d, d]
  Parameter adapter_;     // adapter [encoder_classes, d]
  Parameter sp_proj_;     // sp [encoder_hidden, d]
};

}  // namespace ctcbridge
