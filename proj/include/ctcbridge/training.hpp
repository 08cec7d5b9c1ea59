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

// Training loops.
//
// Every random choice in a step (batch members, dropout masks, augmentation)
// is drawn from a stream keyed by (seed, step), so a run resumed from a
// checkpoint taken at step s continues exactly as the uninterrupted run.
// Gradients are accumulated one utterance at a time in batch order.

#pragma once

#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "ctcbridge/ctc.hpp"
#include "ctcbridge/encoder.hpp"
#include "ctcbridge/eval.hpp"
#include "ctcbridge/optim.hpp"
#include "ctcbridge/speech_lm.hpp"
#include "ctcbridge/synthdata.hpp"

namespace ctcbridge {

struct TrainConfig {
  int steps = 2000;
  int batch = 16;
  AdamConfig adam;  // adam.total_steps follows steps
  double dropout = 0.1;
  MaskConfig augment;
  std::uint64_t seed = 0;
  int eval_every = 250;
  std::size_t dev_subset = 200;  // leading dev utterances used for dev loss; 0 = all

  AdamConfig adam_config() const {
    AdamConfig a = adam;
    a.total_steps = steps;
    return a;
  }
  std::string to_json() const;
  // Missing keys keep the values in `defaults`.
  static TrainConfig from_json(const std::string& text, TrainConfig defaults);
  static TrainConfig from_json(const std::string& text) { return from_json(text, TrainConfig()); }
};

struct LossPoint {
  int step = 0;
  double train_loss = std::numeric_limits<double>::quiet_NaN();
  double dev_loss = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

struct TrainReport {
  std::vector<LossPoint> curve;
  double initial_dev_loss = std::numeric_limits<double>::quiet_NaN();
  double final_dev_loss = std::numeric_limits<double>::quiet_NaN();
  int steps_done = 0;
  std::size_t skipped = 0;  // infeasible CTC targets

  // step,train_loss,dev_loss,lr
  std::string to_csv() const;
};

struct TrainHooks {
  int checkpoint_every = 0;
  std::function<void(int step)> on_checkpoint;
  std::function<void(const LossPoint&)> on_log;
};

// Dataset indices for batch `step`: consecutive slices of per-epoch
// permutations drawn from the seed.
std::vector<std::size_t> batch_indices(std::size_t n, int batch, std::uint64_t seed, int step);

// Encoder-vocabulary ids for a sequence in the task vocabulary, matched by
// token string. Throws DomainError when a token is missing.
TokenSeq to_vocab(const TokenSeq& seq, const Vocabulary& from, const Vocabulary& to);

// Mean CTC loss over the leading `subset` utterances (0 = all); infeasible
// targets are skipped.
double encoder_dev_loss(const SpeechEncoder& enc, const Dataset& dev, const Vocabulary& task_vocab,
                        std::size_t subset = 0);

// Continues from opt.step_count() up to cfg.steps. Throws NumericalError on
// a non-finite loss or gradient before the offending update is applied.
TrainReport train_encoder_ctc(SpeechEncoder& enc, Adam& opt, const Dataset& train, const Dataset& dev,
                              const Vocabulary& task_vocab, const TrainConfig& cfg, const TrainHooks& hooks = {});

// Text-only pretraining on fresh sentences sampled from the task language,
// or their translations when `translated` is set.
TrainReport pretrain_lm(DecoderLM& lm, Adam& opt, const TaskSpec& spec, const TrainConfig& cfg,
                        const TrainHooks& hooks = {}, bool translated = false);

using NBestCache = std::map<std::string, NBestList>;

// N-best lists for every utterance from beam search on the encoder output.
NBestCache build_nbest_cache(const SpeechEncoder& enc, const Dataset& data, int beam, int n);

// Throws ContractViolation when the encoder cannot feed this system.
void check_compatible(const SpeechEncoder& enc, const SpeechLM& slm);

SpeechInputs make_speech_inputs(const SpeechLM& slm, const SpeechEncoder& enc, const Tensor& frames,
                                const NBestList* nbest);
std::vector<SpeechInputs> make_speech_inputs(const SpeechLM& slm, const SpeechEncoder& enc, const Dataset& data,
                                             const NBestCache* cache);

// Mean per-token NLL of the targets (dev loss) under inference settings.
double decoder_dev_loss(const SpeechLM& slm, const std::vector<SpeechInputs>& inputs, const Dataset& dev,
                        std::size_t subset = 0);

// Trains the decoder and the mode's extra parameters with the encoder frozen.
// The encoder must have every parameter flagged frozen; the aec mode needs
// a cache covering train and dev.
TrainReport adapt_decoder(SpeechLM& slm, const SpeechEncoder& frozen_enc, Adam& opt, const Dataset& train,
                          const Dataset& dev, const TrainConfig& cfg, const NBestCache* cache = nullptr,
                          const TrainHooks& hooks = {});

TeacherForcingStats teacher_forcing_stats(const SpeechLM& slm, const std::vector<SpeechInputs>& inputs,
                                          const Dataset& data);

}  // namespace ctcbridge
