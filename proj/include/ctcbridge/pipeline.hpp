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

// Experiment recipes and the commands built on them.
//
// A recipe names every input of a run: the task, the data seed, the encoder
// and its CTC training corpus, the decoder and its text pretraining, the
// adaptation mode with its connector, and the evaluation settings. Each
// command is a pure function of its recipe and input checkpoints, and every
// JSON it reports echoes the recipe it ran with.

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ctcbridge/checkpoint.hpp"
#include "ctcbridge/training.hpp"

namespace ctcbridge {

enum class TaskKind { kAsr, kAst };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

// {1e-4, 0.5, 0.6, ..., 1.5, 1e4}
std::vector<double> default_tau_grid();

struct EvalConfig {
  std::string set = "test";  // dev | test
  int beam = 10;             // CTC beam: baseline decode and aec n-best lists
  int nbest = 4;             // hypotheses kept per list
  int lm_beam = 1;           // decoder search; 1 is greedy
  std::size_t max_len = 24;  // decoder steps including eos
  // Override the connector stored with the decoder when set.
  std::optional<double> tau, blk_downscale;
  std::vector<double> tau_grid = default_tau_grid();
};

struct Recipe {
  std::string name = "reference";
  TaskKind kind = TaskKind::kAsr;
  TaskSpec task;  // materialized
  std::uint64_t data_seed = 0;

  // CTC training corpus: "context_free" renders the task's acoustics and
  // confusions over uniformly drawn word sequences; "task" uses the task's
  // own training split.
  std::string encoder_corpus = "context_free";
  // "task", or "shuffled": the task tokens in a seeded order plus four
  // unused words, which only the adapter mode can bridge.
  std::string encoder_vocab = "task";
  EncoderConfig encoder;
  TrainConfig encoder_train;

  DecoderConfig decoder;
  TrainConfig lm_train;

  AdaptMode mode = AdaptMode::kLego;
  ConnectorConfig connector;
  int aec_n = 4;
  TrainConfig adapt_train;

  EvalConfig eval;

  static Recipe reference();

  nlohmann::json to_json() const;
  // Keys absent from `j` keep their reference values. A "task_file" entry
  // is resolved against `base_dir` and wins over an inline "task".
  static Recipe from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static Recipe from_file(const std::string& path);
  // RFC 7386 merge patch over to_json().
  Recipe patched(const nlohmann::json& patch) const;
};

// Decoder-side data: targets are translated for the AST task.
Splits task_splits(const Recipe& r);
// The encoder's CTC training corpus (source-side labels).
Splits encoder_splits(const Recipe& r);
Vocabulary encoder_vocabulary(const Recipe& r);
const Dataset& eval_split(const Splits& s, const std::string& name);

// Maps encoder-vocabulary ids back to the task vocabulary by token string,
// dropping tokens the task does not have.
TokenSeq from_encoder_vocab(const TokenSeq& seq, const Vocabulary& enc_vocab, const Vocabulary& task_vocab);

std::string hex64(std::uint64_t h);

// Model <-> checkpoint. The *_from_checkpoint functions check the "kind"
// field and throw FormatError on a mismatch.
Checkpoint encoder_checkpoint(const SpeechEncoder& enc, const Adam* opt, int step);
SpeechEncoder encoder_from_checkpoint(const Checkpoint& ck);
Checkpoint lm_checkpoint(const DecoderLM& lm, const Adam* opt, int step);
DecoderLM lm_from_checkpoint(const Checkpoint& ck);
Checkpoint speech_lm_checkpoint(const SpeechLM& slm, const Checkpoint& encoder_ck, int step);
SpeechLM speech_lm_from_checkpoint(const Checkpoint& ck);

// Greedy (beam <= 1) or prefix-beam CTC decode of a whole split against the
// source transcripts.
WerReport ctc_wer(const SpeechEncoder& enc, const Dataset& data, const Vocabulary& task_vocab, int beam);

struct SystemEval {
  WerReport wer;
  double bleu = 0.0;
  std::vector<TokenSeq> hyps;
};

// Decodes every utterance through the connected system and scores it
// against the targets.
SystemEval evaluate_system(const SpeechLM& slm, const SpeechEncoder& enc, const Dataset& data, const EvalConfig& cfg);

// Applies the recipe's tau / blk_downscale overrides to `slm`.
void apply_eval_overrides(SpeechLM& slm, const EvalConfig& cfg);

struct CommandHooks {
  std::function<void(const std::string&)> log;
  int checkpoint_every = 0;  // periodic checkpoints while training; 0 = off
  std::string curve_csv;     // loss curve destination; empty = none
};

nlohmann::json cmd_gen_data(const Recipe& r, const std::string& out_dir);
// Resuming requires a checkpoint written by this command with the same
// encoder config; training continues from its step count. On divergence the
// last good state is written to `out` with status "diverged" before the
// NumericalError propagates.
nlohmann::json cmd_train_encoder(const Recipe& r, const std::string& out, const std::string& resume = {},
                                 const CommandHooks& hooks = {});
nlohmann::json cmd_train_lm(const Recipe& r, const std::string& out, const CommandHooks& hooks = {});
// `lm` may be empty to adapt a randomly initialized decoder.
nlohmann::json cmd_adapt(const Recipe& r, const std::string& enc, const std::string& lm, const std::string& out,
                         const CommandHooks& hooks = {});
// `dec` empty: CTC beam-search baseline.
nlohmann::json cmd_decode_eval(const Recipe& r, const std::string& enc, const std::string& dec);
// CSV: tau,wer,sub,del,ins,n_ref
std::string cmd_sweep_tau(const Recipe& r, const std::string& enc, const std::string& dec);
nlohmann::json cmd_swap(const Recipe& r, const std::string& enc_b, const std::string& dec_a);

}  // namespace ctcbridge
