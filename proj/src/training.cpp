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

#include "ctcbridge/training.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace ctcbridge {

namespace {

// Stream tags under Rng(seed).
constexpr std::uint64_t kEpochStream = 0x45504F43;
constexpr std::uint64_t kStepStream = 0x53544550;
constexpr std::uint64_t kDropoutStream = 1;
constexpr std::uint64_t kAugmentStream = 2;
constexpr std::uint64_t kTextStream = 3;

void require_finite(double v, int step, const char* what) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << "training diverged at step " << step << ": non-finite " << what;
    throw NumericalError(os.str());
  }
}

// Shared step loop: `accumulate(step)` fills the gradients and returns the
// batch loss; evaluation and logging follow the common schedule.
TrainReport run_loop(Adam& opt, const TrainConfig& cfg, const TrainHooks& hooks,
                     const std::function<double(int)>& accumulate, const std::function<double()>& dev_loss) {
  TrainReport rep;
  const int start = opt.step_count();
  rep.initial_dev_loss = dev_loss();
  rep.curve.push_back({start, std::numeric_limits<double>::quiet_NaN(), rep.initial_dev_loss, 0.0});
  double run_sum = 0.0;
  int run_n = 0;
  for (int step = start; step < cfg.steps; ++step) {
    opt.zero_grad();
    const double loss = accumulate(step);
    require_finite(loss, step, "loss");
    require_finite(opt.grad_norm(), step, "gradient");
    const double lr = opt.step();
    run_sum += loss;
    ++run_n;
    const int done = step + 1;
    const bool eval = cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.steps);
    if (eval) {
      LossPoint pt{done, run_sum / run_n, dev_loss(), lr};
      require_finite(pt.dev_loss, step, "dev loss");
      rep.curve.push_back(pt);
      if (hooks.on_log) hooks.on_log(pt);
      run_sum = 0.0;
      run_n = 0;
    }
    if (hooks.on_checkpoint && hooks.checkpoint_every > 0 && done % hooks.checkpoint_every == 0) hooks.on_checkpoint(done);
  }
  rep.steps_done = opt.step_count();
  rep.final_dev_loss = (rep.curve.size() > 1 && rep.curve.back().step == rep.steps_done) ? rep.curve.back().dev_loss
                                                                                          : dev_loss();
  return rep;
}

std::size_t subset_size(const Dataset& d, std::size_t subset) {
  return subset == 0 ? d.utts.size() : std::min(subset, d.utts.size());
}

}  // namespace

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["steps"] = steps;
  j["batch"] = batch;
  j["lr"] = adam.lr;
  j["beta1"] = adam.beta1;
  j["beta2"] = adam.beta2;
  j["eps"] = adam.eps;
  j["warmup"] = adam.warmup;
  j["min_lr_ratio"] = adam.min_lr_ratio;
  j["clip"] = adam.clip;
  j["dropout"] = dropout;
  j["augment"] = {{"time_masks", augment.time_masks},
                  {"time_ratio", augment.time_ratio},
                  {"freq_masks", augment.freq_masks},
                  {"freq_width", augment.freq_width}};
  j["seed"] = seed;
  j["eval_every"] = eval_every;
  j["dev_subset"] = dev_subset;
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text, TrainConfig c) {
  try {
    auto j = nlohmann::json::parse(text);
    c.steps = j.value("steps", c.steps);
    c.batch = j.value("batch", c.batch);
    c.adam.lr = j.value("lr", c.adam.lr);
    c.adam.beta1 = j.value("beta1", c.adam.beta1);
    c.adam.beta2 = j.value("beta2", c.adam.beta2);
    c.adam.eps = j.value("eps", c.adam.eps);
    c.adam.warmup = j.value("warmup", c.adam.warmup);
    c.adam.min_lr_ratio = j.value("min_lr_ratio", c.adam.min_lr_ratio);
    c.adam.clip = j.value("clip", c.adam.clip);
    c.dropout = j.value("dropout", c.dropout);
    if (j.contains("augment")) {
      const auto& a = j["augment"];
      c.augment.time_masks = a.value("time_masks", c.augment.time_masks);
      c.augment.time_ratio = a.value("time_ratio", c.augment.time_ratio);
      c.augment.freq_masks = a.value("freq_masks", c.augment.freq_masks);
      c.augment.freq_width = a.value("freq_width", c.augment.freq_width);
    }
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.dev_subset = j.value("dev_subset", c.dev_subset);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("train config: ") + e.what());
  }
  if (c.steps < 0 || c.batch < 1) throw DomainError("train config: steps must be >= 0 and batch >= 1");
  if (c.adam.lr < 0.0) throw DomainError("train config: lr must be >= 0");
  if (c.dropout < 0.0 || c.dropout >= 1.0) throw DomainError("train config: dropout must lie in [0, 1)");
  if (c.augment.time_ratio < 0.0 || c.augment.time_ratio > 1.0)
    throw DomainError("train config: augment.time_ratio must lie in [0, 1]");
  return c;
}

std::string TrainReport::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "step,train_loss,dev_loss,lr\n";
  for (const auto& p : curve) {
    os << p.step << ',';
    if (!std::isnan(p.train_loss)) os << p.train_loss;
    os << ',';
    if (!std::isnan(p.dev_loss)) os << p.dev_loss;
    os << ',' << p.lr << '\n';
  }
  return os.str();
}

std::vector<std::size_t> batch_indices(std::size_t n, int batch, std::uint64_t seed, int step) {
  CTCB_REQUIRE(n >= 1, "batch_indices: empty dataset");
  const Rng root = Rng(seed).split(kEpochStream);
  std::vector<std::size_t> out;
  out.reserve(batch);
  std::vector<std::size_t> perm;
  std::size_t perm_epoch = static_cast<std::size_t>(-1);
  for (int b = 0; b < batch; ++b) {
    const std::size_t flat = static_cast<std::size_t>(step) * batch + b;
    const std::size_t epoch = flat / n;
    if (epoch != perm_epoch) {
      perm.resize(n);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      Rng r = root.split(epoch);
      for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[r.below(i)]);
      perm_epoch = epoch;
    }
    out.push_back(perm[flat % n]);
  }
  return out;
}

TokenSeq to_vocab(const TokenSeq& seq, const Vocabulary& from, const Vocabulary& to) {
  if (from == to) return seq;
  TokenSeq out;
  out.ids.reserve(seq.size());
  for (int id : seq.ids) out.ids.push_back(to.id_of(from.token(id)));
  return out;
}

double encoder_dev_loss(const SpeechEncoder& enc, const Dataset& dev, const Vocabulary& task_vocab,
                        std::size_t subset) {
  const std::size_t n = subset_size(dev, subset);
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& u = dev.utts[i];
    bool feasible = true;
    const double l = ctc_loss_value(enc.encode(u.frames), to_vocab(u.source, task_vocab, enc.vocab()), &feasible);
    if (!feasible) continue;
    total += l;
    ++used;
  }
  if (used == 0) throw DomainError("encoder_dev_loss: no feasible dev utterances");
  return total / static_cast<double>(used);
}

TrainReport train_encoder_ctc(SpeechEncoder& enc, Adam& opt, const Dataset& train, const Dataset& dev,
                              const Vocabulary& task_vocab, const TrainConfig& cfg, const TrainHooks& hooks) {
  CTCB_REQUIRE(!train.utts.empty(), "train_encoder_ctc: empty training set");
  CTCB_REQUIRE(!dev.utts.empty(), "train_encoder_ctc: empty dev set");
  std::vector<TokenSeq> targets;
  targets.reserve(train.utts.size());
  for (const auto& u : train.utts) targets.push_back(to_vocab(u.source, task_vocab, enc.vocab()));
  std::size_t skipped = 0;
  auto accumulate = [&](int step) {
    const auto idx = batch_indices(train.utts.size(), cfg.batch, cfg.seed, step);
    const Rng sr = Rng(cfg.seed).split(kStepStream).split(static_cast<std::uint64_t>(step));
    std::vector<std::size_t> feasible;
    for (std::size_t i : idx) {
      const std::size_t frames = SpeechEncoder::output_frames(train.utts[i].frames.rows());
      if (ctc_min_frames(targets[i]) <= frames) feasible.push_back(i);
      else ++skipped;
    }
    if (feasible.empty()) return 0.0;
    const double inv = 1.0 / static_cast<double>(feasible.size());
    double total = 0.0;
    for (std::size_t b = 0; b < feasible.size(); ++b) {
      const auto& u = train.utts[feasible[b]];
      const Rng ur = sr.split(b);
      Rng drop = ur.split(kDropoutStream);
      Tensor frames = u.frames;
      if (cfg.augment.active()) {
        Rng aug = ur.split(kAugmentStream);
        frames = augment(frames, cfg.augment, aug);
      }
      Tape tape;
      tape.training = true;
      Var<float> z = enc.forward(tape, frames, &drop, cfg.dropout);
      CtcLoss<float> l = ctc_loss(z, targets[feasible[b]]);
      total += static_cast<double>(l.loss.value().item());
      tape.backward(ad::scale(l.loss, inv));
    }
    return total * inv;
  };
  auto dev_loss = [&] { return encoder_dev_loss(enc, dev, task_vocab, cfg.dev_subset); };
  TrainReport rep = run_loop(opt, cfg, hooks, accumulate, dev_loss);
  rep.skipped = skipped;
  return rep;
}

TrainReport pretrain_lm(DecoderLM& lm, Adam& opt, const TaskSpec& spec, const TrainConfig& cfg,
                        const TrainHooks& hooks, bool translated) {
  auto sentence = [&](Rng& r) {
    TokenSeq s = sample_sentence(spec, r);
    return translated ? translate_target(s, spec.translation_map) : s;
  };
  const Vocabulary& v = lm.vocab();
  // A fixed held-out sample for dev loss, disjoint from every step stream.
  std::vector<TokenSeq> dev;
  {
    Rng r = Rng(cfg.seed).split(kTextStream).split(0xDE7);
    const std::size_t n = cfg.dev_subset == 0 ? 200 : cfg.dev_subset;
    for (std::size_t i = 0; i < n; ++i) dev.push_back(sentence(r));
  }
  auto accumulate = [&](int step) {
    const Rng sr = Rng(cfg.seed).split(kStepStream).split(static_cast<std::uint64_t>(step));
    Rng text = sr.split(kTextStream);
    std::vector<TokenSeq> batch;
    std::size_t tokens = 0;
    for (int b = 0; b < cfg.batch; ++b) {
      batch.push_back(sentence(text));
      tokens += batch.back().size() + 1;
    }
    const double inv = 1.0 / static_cast<double>(tokens);
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      Rng drop = sr.split(b).split(kDropoutStream);
      Tape tape;
      tape.training = true;
      Var<float> logits = lm.forward(tape, Var<float>(), SpeechLM::framed_input(v, batch[b]), &drop, cfg.dropout);
      Var<float> l = ad::cross_entropy(logits, SpeechLM::framed_targets(v, batch[b]), ad::Reduction::kSum);
      total += static_cast<double>(l.value().item());
      tape.backward(ad::scale(l, inv));
    }
    return total * inv;
  };
  auto dev_loss = [&] {
    double nll = 0.0;
    std::size_t count = 0;
    for (const auto& s : dev) {
      Tape tape;
      tape.no_grad = true;
      Var<float> logits = lm.forward(tape, Var<float>(), SpeechLM::framed_input(v, s));
      nll += static_cast<double>(
          ad::cross_entropy(logits, SpeechLM::framed_targets(v, s), ad::Reduction::kSum).value().item());
      count += s.size() + 1;
    }
    return nll / static_cast<double>(count);
  };
  return run_loop(opt, cfg, hooks, accumulate, dev_loss);
}

NBestCache build_nbest_cache(const SpeechEncoder& enc, const Dataset& data, int beam, int n) {
  NBestCache cache;
  for (const auto& u : data.utts) cache[u.id] = beam_search(to_posteriorgram(enc.encode(u.frames)), beam, n);
  return cache;
}

void check_compatible(const SpeechEncoder& enc, const SpeechLM& slm) {
  const auto& c = slm.config();
  switch (slm.mode()) {
    case AdaptMode::kAdapter:
      CTCB_REQUIRE(enc.classes() == c.encoder_classes,
                   "encoder has " + std::to_string(enc.classes()) + " output classes, adapter expects " +
                       std::to_string(c.encoder_classes));
      break;
    case AdaptMode::kSp:
      CTCB_REQUIRE(enc.config().hidden == c.encoder_hidden,
                   "encoder hidden width " + std::to_string(enc.config().hidden) + " != projection rows " +
                       std::to_string(c.encoder_hidden));
      break;
    case AdaptMode::kText: break;
    default:
      CTCB_REQUIRE(enc.vocab() == slm.vocab(),
                   "encoder vocabulary does not match the decoder vocabulary (use adapter mode for mismatched "
                   "vocabularies)");
  }
}

SpeechInputs make_speech_inputs(const SpeechLM& slm, const SpeechEncoder& enc, const Tensor& frames,
                                const NBestList* nbest) {
  SpeechInputs in;
  switch (slm.mode()) {
    case AdaptMode::kSp: in.hidden = enc.encode_hidden(frames); break;
    case AdaptMode::kAec: {
      if (nbest) {
        in.aec_stream = aec_stream(*nbest, slm.config().aec_n, slm.vocab());
      } else {
        const NBestList l = beam_search(to_posteriorgram(enc.encode(frames)), std::max(10, slm.config().aec_n),
                                        slm.config().aec_n);
        in.aec_stream = aec_stream(l, slm.config().aec_n, slm.vocab());
      }
      break;
    }
    case AdaptMode::kText: break;
    default: in.logits = enc.encode(frames);
  }
  return in;
}

std::vector<SpeechInputs> make_speech_inputs(const SpeechLM& slm, const SpeechEncoder& enc, const Dataset& data,
                                             const NBestCache* cache) {
  check_compatible(enc, slm);
  std::vector<SpeechInputs> out;
  out.reserve(data.utts.size());
  for (const auto& u : data.utts) {
    const NBestList* nb = nullptr;
    if (slm.mode() == AdaptMode::kAec && cache) {
      auto it = cache->find(u.id);
      CTCB_REQUIRE(it != cache->end(), "n-best cache has no entry for " + u.id);
      nb = &it->second;
    }
    out.push_back(make_speech_inputs(slm, enc, u.frames, nb));
  }
  return out;
}

double decoder_dev_loss(const SpeechLM& slm, const std::vector<SpeechInputs>& inputs, const Dataset& dev,
                        std::size_t subset) {
  const std::size_t n = subset_size(dev, subset);
  CTCB_REQUIRE(inputs.size() >= n, "decoder_dev_loss: missing inputs");
  double nll = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tape tape;
    tape.no_grad = true;
    nll += static_cast<double>(slm.loss(tape, inputs[i], dev.utts[i].target, Phase::kInference).value().item());
    count += dev.utts[i].target.size() + 1;
  }
  if (count == 0) throw DomainError("decoder_dev_loss: empty dev set");
  return nll / static_cast<double>(count);
}

TrainReport adapt_decoder(SpeechLM& slm, const SpeechEncoder& enc, Adam& opt, const Dataset& train,
                          const Dataset& dev, const TrainConfig& cfg, const NBestCache* cache,
                          const TrainHooks& hooks) {
  CTCB_REQUIRE(!train.utts.empty() && !dev.utts.empty(), "adapt_decoder: empty dataset");
  for (const Parameter* p : enc.parameters())
    CTCB_REQUIRE(!p->trainable, "adapt_decoder: encoder parameter " + p->name + " is not frozen");
  if (slm.mode() == AdaptMode::kAec) CTCB_REQUIRE(cache != nullptr, "adapt_decoder: aec mode needs an n-best cache");
  check_compatible(enc, slm);
  const std::uint64_t enc_hash = enc.hash();

  // Augmented inputs are rebuilt every step; otherwise encoder output is fixed.
  const bool fresh = cfg.augment.active() && slm.mode() != AdaptMode::kAec && slm.mode() != AdaptMode::kText;
  std::vector<SpeechInputs> train_in;
  if (!fresh) train_in = make_speech_inputs(slm, enc, train, cache);
  Dataset dev_view{dev.name, {dev.utts.begin(), dev.utts.begin() + subset_size(dev, cfg.dev_subset)}};
  const std::vector<SpeechInputs> dev_in = make_speech_inputs(slm, enc, dev_view, cache);

  auto accumulate = [&](int step) {
    const auto idx = batch_indices(train.utts.size(), cfg.batch, cfg.seed, step);
    const Rng sr = Rng(cfg.seed).split(kStepStream).split(static_cast<std::uint64_t>(step));
    std::size_t tokens = 0;
    for (std::size_t i : idx) tokens += train.utts[i].target.size() + 1;
    const double inv = 1.0 / static_cast<double>(tokens);
    double total = 0.0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const auto& u = train.utts[idx[b]];
      const Rng ur = sr.split(b);
      Rng drop = ur.split(kDropoutStream);
      SpeechInputs aug_in;
      if (fresh) {
        Rng aug = ur.split(kAugmentStream);
        aug_in = make_speech_inputs(slm, enc, augment(u.frames, cfg.augment, aug), nullptr);
      }
      const SpeechInputs& in = fresh ? aug_in : train_in[idx[b]];
      Tape tape;
      tape.training = true;
      Var<float> l = slm.loss(tape, in, u.target, Phase::kTraining, &drop, cfg.dropout);
      total += static_cast<double>(l.value().item());
      tape.backward(ad::scale(l, inv));
    }
    return total * inv;
  };
  auto dev_loss = [&] { return decoder_dev_loss(slm, dev_in, dev_view); };
  TrainReport rep = run_loop(opt, cfg, hooks, accumulate, dev_loss);
  CTCB_REQUIRE(enc.hash() == enc_hash, "adapt_decoder: encoder weights changed during adaptation");
  return rep;
}

TeacherForcingStats teacher_forcing_stats(const SpeechLM& slm, const std::vector<SpeechInputs>& inputs,
                                          const Dataset& data) {
  CTCB_REQUIRE(inputs.size() == data.utts.size(), "teacher_forcing_stats: inputs do not match dataset");
  TeacherForcingAccumulator acc;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& tgt = data.utts[i].target;
    acc.add(slm.teacher_forced_logits(inputs[i], tgt), SpeechLM::framed_targets(slm.vocab(), tgt));
  }
  return acc.result();
}

}  // namespace ctcbridge
