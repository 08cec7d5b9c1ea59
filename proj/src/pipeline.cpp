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

#include "ctcbridge/pipeline.hpp"

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <utility>

namespace ctcbridge {
namespace {

using nlohmann::json;

constexpr std::uint64_t kVocabShuffleSeed = 0x564F4342;

std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("short write to '" + path + "'");
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + ": expected an object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw FormatError(where + ": unknown key '" + k + "'");
}

json parsed(const std::string& text) { return json::parse(text); }

// Declarative task fields, plus the tables only when they differ from what
// those fields regenerate.
json task_json(const TaskSpec& t) {
  json full = parsed(t.to_json());
  json decl = full;
  decl.erase("transitions");
  decl.erase("confusion_pairs");
  decl.erase("translation_map");
  const TaskSpec regen = TaskSpec::from_json(decl.dump());
  if (regen.transitions == t.transitions) full.erase("transitions");
  if (regen.confusion_pairs == t.confusion_pairs) full.erase("confusion_pairs");
  if (regen.translation_map == t.translation_map) full.erase("translation_map");
  return full;
}

json eval_json(const EvalConfig& e) {
  json j;
  j["set"] = e.set;
  j["beam"] = e.beam;
  j["nbest"] = e.nbest;
  j["lm_beam"] = e.lm_beam;
  j["max_len"] = e.max_len;
  j["tau"] = e.tau ? json(*e.tau) : json(nullptr);
  j["blk_downscale"] = e.blk_downscale ? json(*e.blk_downscale) : json(nullptr);
  j["tau_grid"] = e.tau_grid;
  return j;
}

EvalConfig eval_from_json(const json& j, EvalConfig e) {
  check_keys(j, {"set", "beam", "nbest", "lm_beam", "max_len", "tau", "blk_downscale", "tau_grid"}, "eval");
  e.set = j.value("set", e.set);
  e.beam = j.value("beam", e.beam);
  e.nbest = j.value("nbest", e.nbest);
  e.lm_beam = j.value("lm_beam", e.lm_beam);
  e.max_len = j.value("max_len", e.max_len);
  if (j.contains("tau")) e.tau = j["tau"].is_null() ? std::nullopt : std::optional<double>(j["tau"].get<double>());
  if (j.contains("blk_downscale"))
    e.blk_downscale =
        j["blk_downscale"].is_null() ? std::nullopt : std::optional<double>(j["blk_downscale"].get<double>());
  if (j.contains("tau_grid")) e.tau_grid = j["tau_grid"].get<std::vector<double>>();
  if (e.set != "dev" && e.set != "test") throw DomainError("eval.set must be 'dev' or 'test', got '" + e.set + "'");
  if (e.beam < 1 || e.nbest < 1 || e.lm_beam < 1) throw DomainError("eval: beam, nbest and lm_beam must be >= 1");
  if (e.nbest > e.beam) throw DomainError("eval: nbest cannot exceed beam");
  if (e.max_len < 1) throw DomainError("eval: max_len must be >= 1");
  if (e.tau && !(*e.tau > 0.0)) throw DomainError("eval: tau must be > 0");
  if (e.blk_downscale && !(*e.blk_downscale >= 1.0)) throw DomainError("eval: blk_downscale must be >= 1");
  if (e.tau_grid.empty()) throw DomainError("eval: tau_grid is empty");
  for (double t : e.tau_grid)
    if (!(t > 0.0)) throw DomainError("eval: tau_grid entries must be > 0");
  return e;
}

json wer_json(const WerReport& w) { return parsed(w.to_json()); }

const std::string& require_kind(const Checkpoint& ck, const std::string& kind) {
  const auto& k = ck.meta.value("kind", std::string());
  if (!ck.meta.contains("kind") || ck.meta["kind"] != kind)
    throw FormatError("checkpoint holds '" + k + "', expected '" + kind + "'");
  return kind;
}

void emit(const CommandHooks& h, const std::string& line) {
  if (h.log) h.log(line);
}

TrainHooks train_hooks(const CommandHooks& h, const std::string& tag, std::function<void(int)> save) {
  TrainHooks th;
  th.on_log = [&h, tag](const LossPoint& p) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s step %d train %.5f dev %.5f lr %.3g", tag.c_str(), p.step, p.train_loss,
                  p.dev_loss, p.lr);
    emit(h, buf);
  };
  th.checkpoint_every = h.checkpoint_every;
  th.on_checkpoint = std::move(save);
  return th;
}

void write_curve(const CommandHooks& h, const TrainReport& rep) {
  if (!h.curve_csv.empty()) write_text(h.curve_csv, rep.to_csv());
}

json report_json(const TrainReport& rep) {
  json j;
  j["steps_done"] = rep.steps_done;
  j["initial_dev_loss"] = rep.initial_dev_loss;
  j["final_dev_loss"] = rep.final_dev_loss;
  return j;
}

std::vector<SpeechInputs> eval_inputs(const SpeechLM& slm, const SpeechEncoder& enc, const Dataset& data,
                                      const EvalConfig& cfg) {
  NBestCache cache;
  if (slm.mode() == AdaptMode::kAec) cache = build_nbest_cache(enc, data, cfg.beam, std::max(cfg.nbest, 1));
  return make_speech_inputs(slm, enc, data, slm.mode() == AdaptMode::kAec ? &cache : nullptr);
}

SystemEval score_inputs(const SpeechLM& slm, const std::vector<SpeechInputs>& inputs, const Dataset& data,
                        const EvalConfig& cfg) {
  SystemEval out;
  std::vector<TokenSeq> refs;
  GenerateOptions opts;
  opts.max_len = cfg.max_len;
  opts.beam = cfg.lm_beam;
  for (std::size_t i = 0; i < data.utts.size(); ++i) {
    out.hyps.push_back(slm.generate(inputs[i], opts));
    refs.push_back(data.utts[i].target);
  }
  out.wer = corpus_wer(refs, out.hyps);
  out.bleu = bleu(refs, out.hyps);
  return out;
}

struct LoadedSystem {
  SpeechEncoder enc;
  SpeechLM slm;
  json dec_meta;
};

LoadedSystem load_system(const Recipe& r, const std::string& enc_path, const std::string& dec_path) {
  LoadedSystem s;
  s.enc = encoder_from_checkpoint(Checkpoint::load(enc_path));
  Checkpoint dck = Checkpoint::load(dec_path);
  s.slm = speech_lm_from_checkpoint(dck);
  s.dec_meta = dck.meta;
  if (!(s.slm.vocab() == r.task.vocab()))
    throw ContractViolation("decoder vocabulary does not match the recipe's task vocabulary");
  check_compatible(s.enc, s.slm);
  apply_eval_overrides(s.slm, r.eval);
  return s;
}

json system_metrics(const Recipe& r, const LoadedSystem& s, const Dataset& data, const SystemEval& ev,
                    const WerReport& greedy) {
  json j;
  j["system"] = to_string(s.slm.mode());
  j["set"] = r.eval.set;
  j["utterances"] = data.utts.size();
  j["wer"] = wer_json(ev.wer);
  j["ctc_greedy_wer"] = wer_json(greedy);
  j["werr_vs_greedy"] = greedy.wer > 0.0 ? json(werr(greedy.wer, ev.wer.wer)) : json(nullptr);
  if (r.kind == TaskKind::kAst) j["bleu"] = ev.bleu;
  j["tau"] = s.slm.config().connector.tau;
  j["blk_downscale"] = s.slm.config().connector.blk_downscale;
  j["lm_beam"] = r.eval.lm_beam;
  if (s.slm.mode() == AdaptMode::kAec) {
    j["beam"] = r.eval.beam;
    j["nbest"] = r.eval.nbest;
  }
  j["encoder_hash"] = hex64(s.enc.hash());
  j["decoder_hash"] = hex64(parameter_hash(s.slm.parameters()));
  j["recipe"] = r.to_json();
  return j;
}

}  // namespace

std::string to_string(TaskKind k) { return k == TaskKind::kAst ? "ast" : "asr"; }

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "asr") return TaskKind::kAsr;
  if (s == "ast") return TaskKind::kAst;
  throw DomainError("unknown task kind '" + s + "' (expected asr or ast)");
}

std::vector<double> default_tau_grid() {
  return {1e-4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1e4};
}

Recipe Recipe::reference() {
  Recipe r;
  r.task.materialize();
  r.encoder_train.steps = 2000;
  r.encoder_train.adam.lr = 3e-3;
  r.encoder_train.dropout = 0.0;
  r.encoder_train.eval_every = 250;
  r.lm_train.steps = 1000;
  r.lm_train.eval_every = 250;
  r.adapt_train.steps = 3000;
  r.adapt_train.adam.lr = 4e-3;
  r.adapt_train.dropout = 0.1;
  r.adapt_train.eval_every = 250;
  return r;
}

json Recipe::to_json() const {
  json j;
  j["name"] = name;
  j["kind"] = to_string(kind);
  j["data_seed"] = data_seed;
  j["task"] = task_json(task);
  j["encoder"] = {{"corpus", encoder_corpus},
                  {"vocab", encoder_vocab},
                  {"model", parsed(encoder.to_json())},
                  {"train", parsed(encoder_train.to_json())}};
  j["lm"] = {{"decoder", parsed(decoder.to_json())}, {"train", parsed(lm_train.to_json())}};
  j["adapt"] = {{"mode", ctcbridge::to_string(mode)},
                {"connector", parsed(connector.to_json())},
                {"aec_n", aec_n},
                {"train", parsed(adapt_train.to_json())}};
  j["eval"] = eval_json(eval);
  return j;
}

Recipe Recipe::from_json(const json& j, const std::string& base_dir) {
  Recipe r = reference();
  try {
    check_keys(j, {"name", "kind", "data_seed", "task", "task_file", "encoder", "lm", "adapt", "eval"}, "recipe");
    r.name = j.value("name", r.name);
    if (j.contains("kind")) r.kind = task_kind_from_string(j["kind"].get<std::string>());
    r.data_seed = j.value("data_seed", r.data_seed);
    if (j.contains("task_file")) {
      std::filesystem::path p = j["task_file"].get<std::string>();
      if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
      r.task = TaskSpec::from_file(p.string());
    } else if (j.contains("task")) {
      r.task = TaskSpec::from_json(j["task"].dump());
    }
    if (j.contains("encoder")) {
      const json& e = j["encoder"];
      check_keys(e, {"corpus", "vocab", "model", "train"}, "encoder");
      r.encoder_corpus = e.value("corpus", r.encoder_corpus);
      r.encoder_vocab = e.value("vocab", r.encoder_vocab);
      if (e.contains("model")) r.encoder = EncoderConfig::from_json(e["model"].dump());
      if (e.contains("train")) r.encoder_train = TrainConfig::from_json(e["train"].dump(), r.encoder_train);
    }
    if (j.contains("lm")) {
      const json& l = j["lm"];
      check_keys(l, {"decoder", "train"}, "lm");
      if (l.contains("decoder")) r.decoder = DecoderConfig::from_json(l["decoder"].dump());
      if (l.contains("train")) r.lm_train = TrainConfig::from_json(l["train"].dump(), r.lm_train);
    }
    if (j.contains("adapt")) {
      const json& a = j["adapt"];
      check_keys(a, {"mode", "connector", "aec_n", "train"}, "adapt");
      if (a.contains("mode")) r.mode = adapt_mode_from_string(a["mode"].get<std::string>());
      if (a.contains("connector")) r.connector = ConnectorConfig::from_json(a["connector"].dump());
      r.aec_n = a.value("aec_n", r.aec_n);
      if (a.contains("train")) r.adapt_train = TrainConfig::from_json(a["train"].dump(), r.adapt_train);
    }
    if (j.contains("eval")) r.eval = eval_from_json(j["eval"], r.eval);
  } catch (const json::exception& e) {
    throw FormatError(std::string("recipe: ") + e.what());
  }
  if (r.encoder_corpus != "context_free" && r.encoder_corpus != "task")
    throw DomainError("encoder.corpus must be 'context_free' or 'task'");
  if (r.encoder_vocab != "task" && r.encoder_vocab != "shuffled")
    throw DomainError("encoder.vocab must be 'task' or 'shuffled'");
  if (r.encoder.input_dim != r.task.feature_dim)
    throw DomainError("encoder.model.input_dim (" + std::to_string(r.encoder.input_dim) +
                      ") must equal task.feature_dim (" + std::to_string(r.task.feature_dim) + ")");
  if (r.aec_n < 1) throw DomainError("adapt.aec_n must be >= 1");
  return r;
}

Recipe Recipe::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open recipe '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::exception& e) {
    throw FormatError("recipe '" + path + "': " + e.what());
  }
  return from_json(j, std::filesystem::path(path).parent_path().string());
}

Recipe Recipe::patched(const json& patch) const {
  json j = to_json();
  j.merge_patch(patch);
  return from_json(j);
}

Splits task_splits(const Recipe& r) {
  Splits s = make_splits(r.task, r.data_seed);
  if (r.kind == TaskKind::kAst) {
    for (Dataset* d : {&s.train, &s.dev, &s.test})
      for (auto& u : d->utts) u.target = translate_target(u.source, r.task.translation_map);
  }
  return s;
}

Splits encoder_splits(const Recipe& r) {
  if (r.encoder_corpus == "task") return make_splits(r.task, r.data_seed);
  return make_splits(r.task.context_free(), r.data_seed);
}

Vocabulary encoder_vocabulary(const Recipe& r) {
  const Vocabulary v = r.task.vocab();
  if (r.encoder_vocab == "task") return v;
  std::vector<std::string> toks = v.tokens();
  for (int i = 0; i < 4; ++i) toks.push_back("x" + std::to_string(i));
  Rng rng(kVocabShuffleSeed);
  for (std::size_t i = toks.size(); i > 1; --i) std::swap(toks[i - 1], toks[rng.below(i)]);
  auto at = [&](const std::string& t) {
    return static_cast<int>(std::find(toks.begin(), toks.end(), t) - toks.begin());
  };
  return Vocabulary(toks, at(v.token(v.sep_id())), at(v.token(v.bos_id())), at(v.token(v.eos_id())));
}

const Dataset& eval_split(const Splits& s, const std::string& name) {
  if (name == "dev") return s.dev;
  if (name == "test") return s.test;
  if (name == "train") return s.train;
  throw DomainError("unknown split '" + name + "'");
}

TokenSeq from_encoder_vocab(const TokenSeq& seq, const Vocabulary& enc_vocab, const Vocabulary& task_vocab) {
  if (enc_vocab == task_vocab) return seq;
  TokenSeq out;
  for (int id : seq.ids) {
    const std::string& tok = enc_vocab.token(id);
    if (task_vocab.contains(tok)) out.ids.push_back(task_vocab.id_of(tok));
  }
  return out;
}

std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

Checkpoint encoder_checkpoint(const SpeechEncoder& enc, const Adam* opt, int step) {
  Checkpoint ck;
  ck.meta["kind"] = "encoder";
  ck.meta["vocab"] = parsed(enc.vocab().to_json());
  ck.meta["encoder"] = parsed(enc.config().to_json());
  ck.meta["step"] = step;
  ck.meta["hash"] = hex64(enc.hash());
  store_parameters(ck, enc.parameters());
  if (opt)
    for (const auto& [n, t] : opt->state()) ck.put(n, t);
  return ck;
}

SpeechEncoder encoder_from_checkpoint(const Checkpoint& ck) {
  require_kind(ck, "encoder");
  try {
    SpeechEncoder enc(EncoderConfig::from_json(ck.meta.at("encoder").dump()),
                      Vocabulary::from_json(ck.meta.at("vocab").dump()));
    load_parameters(ck, enc.parameters());
    return enc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("encoder checkpoint: ") + e.what());
  }
}

Checkpoint lm_checkpoint(const DecoderLM& lm, const Adam* opt, int step) {
  Checkpoint ck;
  ck.meta["kind"] = "lm";
  ck.meta["vocab"] = parsed(lm.vocab().to_json());
  ck.meta["decoder"] = parsed(lm.config().to_json());
  ck.meta["step"] = step;
  store_parameters(ck, lm.parameters());
  if (opt)
    for (const auto& [n, t] : opt->state()) ck.put(n, t);
  return ck;
}

DecoderLM lm_from_checkpoint(const Checkpoint& ck) {
  require_kind(ck, "lm");
  try {
    DecoderLM lm(DecoderConfig::from_json(ck.meta.at("decoder").dump()),
                 Vocabulary::from_json(ck.meta.at("vocab").dump()));
    load_parameters(ck, lm.parameters());
    return lm;
  } catch (const json::exception& e) {
    throw FormatError(std::string("lm checkpoint: ") + e.what());
  }
}

Checkpoint speech_lm_checkpoint(const SpeechLM& slm, const Checkpoint& encoder_ck, int step) {
  Checkpoint ck;
  ck.meta["kind"] = "speech_lm";
  ck.meta["vocab"] = parsed(slm.vocab().to_json());
  ck.meta["speech_lm"] = parsed(slm.config().to_json());
  ck.meta["step"] = step;
  ck.meta["encoder"] = encoder_ck.meta.value("encoder", json::object());
  ck.meta["encoder_vocab"] = encoder_ck.meta.value("vocab", json::object());
  ck.meta["encoder_hash"] = encoder_ck.meta.value("hash", std::string());
  store_parameters(ck, slm.parameters());
  for (const auto& [n, t] : encoder_ck.tensors)
    if (n.rfind("encoder.", 0) == 0) ck.put(n, t);
  return ck;
}

SpeechLM speech_lm_from_checkpoint(const Checkpoint& ck) {
  require_kind(ck, "speech_lm");
  try {
    SpeechLM slm(SpeechLMConfig::from_json(ck.meta.at("speech_lm").dump()),
                 Vocabulary::from_json(ck.meta.at("vocab").dump()));
    load_parameters(ck, slm.parameters());
    return slm;
  } catch (const json::exception& e) {
    throw FormatError(std::string("speech lm checkpoint: ") + e.what());
  }
}

WerReport ctc_wer(const SpeechEncoder& enc, const Dataset& data, const Vocabulary& task_vocab, int beam) {
  std::vector<TokenSeq> refs, hyps;
  for (const auto& u : data.utts) {
    const Posteriorgram p = to_posteriorgram(enc.encode(u.frames));
    TokenSeq h = beam <= 1 ? greedy_decode(p) : beam_search(p, beam, 1).hyps.at(0).tokens;
    hyps.push_back(from_encoder_vocab(h, enc.vocab(), task_vocab));
    refs.push_back(u.source);
  }
  return corpus_wer(refs, hyps);
}

SystemEval evaluate_system(const SpeechLM& slm, const SpeechEncoder& enc, const Dataset& data,
                           const EvalConfig& cfg) {
  return score_inputs(slm, eval_inputs(slm, enc, data, cfg), data, cfg);
}

void apply_eval_overrides(SpeechLM& slm, const EvalConfig& cfg) {
  ConnectorConfig c = slm.config().connector;
  if (cfg.tau) c.tau = *cfg.tau;
  if (cfg.blk_downscale) c.blk_downscale = *cfg.blk_downscale;
  slm.set_connector(c);
}

json cmd_gen_data(const Recipe& r, const std::string& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create '" + out_dir + "': " + ec.message());
  const Splits s = task_splits(r);
  write_text(out_dir + "/task.json", r.task.to_json() + "\n");
  json sizes, hashes;
  std::uint64_t combined = fnv1a(r.task.to_json());
  for (const auto& [name, d] : {std::pair<std::string, const Dataset*>{"train", &s.train},
                                {"dev", &s.dev},
                                {"test", &s.test}}) {
    std::string lines;
    for (const auto& u : d->utts) lines += utterance_to_jsonl(u) + "\n";
    write_text(out_dir + "/" + name + ".jsonl", lines);
    const std::uint64_t h = dataset_hash(*d);
    sizes[name] = d->utts.size();
    hashes[name] = hex64(h);
    combined = fnv1a(hex64(h), combined);
  }
  json m;
  m["command"] = "gen-data";
  m["seed"] = r.data_seed;
  m["kind"] = to_string(r.kind);
  m["sizes"] = sizes;
  m["hashes"] = hashes;
  m["task_hash"] = hex64(fnv1a(r.task.to_json()));
  m["manifest_hash"] = hex64(combined);
  m["recipe"] = r.to_json();
  write_text(out_dir + "/manifest.json", m.dump(2) + "\n");
  return m;
}

json cmd_train_encoder(const Recipe& r, const std::string& out, const std::string& resume,
                       const CommandHooks& hooks) {
  const Splits es = encoder_splits(r);
  const Vocabulary tv = r.task.vocab();
  SpeechEncoder enc(r.encoder, encoder_vocabulary(r));
  Adam opt(enc.parameters(), r.encoder_train.adam_config());
  if (!resume.empty()) {
    const Checkpoint ck = Checkpoint::load(resume);
    const SpeechEncoder prev = encoder_from_checkpoint(ck);
    if (prev.config().to_json() != enc.config().to_json() || !(prev.vocab() == enc.vocab()))
      throw ContractViolation("resume checkpoint was trained with a different encoder config or vocabulary");
    load_parameters(ck, enc.parameters());
    opt.load_state(ck.tensors, ck.meta.at("step").get<int>());
    emit(hooks, "resuming encoder training at step " + std::to_string(opt.step_count()));
  }
  auto save = [&](const std::string& status) {
    Checkpoint ck = encoder_checkpoint(enc, &opt, opt.step_count());
    ck.meta["status"] = status;
    ck.meta["recipe"] = r.to_json();
    ck.save(out);
  };
  TrainReport rep;
  try {
    rep = train_encoder_ctc(enc, opt, es.train, es.dev, tv, r.encoder_train,
                            train_hooks(hooks, "encoder", [&](int) { save("partial"); }));
  } catch (const NumericalError&) {
    save("diverged");
    throw;
  }
  save("complete");
  write_curve(hooks, rep);

  const Splits ts = task_splits(r);
  const WerReport dev_wer = ctc_wer(enc, ts.dev, tv, 1);
  emit(hooks, "encoder dev greedy WER " + std::to_string(dev_wer.wer));
  json j = report_json(rep);
  j["command"] = "train-encoder";
  j["step"] = opt.step_count();
  j["skipped"] = rep.skipped;
  j["dev_greedy_wer"] = wer_json(dev_wer);
  j["encoder_hash"] = hex64(enc.hash());
  j["checkpoint"] = out;
  j["recipe"] = r.to_json();
  return j;
}

json cmd_train_lm(const Recipe& r, const std::string& out, const CommandHooks& hooks) {
  DecoderLM lm(r.decoder, r.task.vocab());
  Adam opt(lm.parameters(), r.lm_train.adam_config());
  auto save = [&] {
    Checkpoint ck = lm_checkpoint(lm, nullptr, opt.step_count());
    ck.meta["recipe"] = r.to_json();
    ck.save(out);
  };
  const TrainReport rep = pretrain_lm(lm, opt, r.task, r.lm_train, train_hooks(hooks, "lm", [&](int) { save(); }),
                                      r.kind == TaskKind::kAst);
  save();
  write_curve(hooks, rep);
  json j = report_json(rep);
  j["command"] = "train-lm";
  j["checkpoint"] = out;
  j["recipe"] = r.to_json();
  return j;
}

json cmd_adapt(const Recipe& r, const std::string& enc_path, const std::string& lm_path, const std::string& out,
               const CommandHooks& hooks) {
  const Checkpoint eck = Checkpoint::load(enc_path);
  SpeechEncoder enc = encoder_from_checkpoint(eck);
  enc.set_trainable(false);

  SpeechLMConfig sc;
  sc.mode = r.mode;
  sc.connector = connector_for_mode(r.mode, r.connector);
  sc.decoder = r.decoder;
  sc.encoder_classes = enc.classes();
  sc.encoder_hidden = enc.config().hidden;
  sc.aec_n = r.aec_n;
  SpeechLM slm(sc, r.task.vocab());
  if (!lm_path.empty()) {
    const DecoderLM lm = lm_from_checkpoint(Checkpoint::load(lm_path));
    if (lm.config().to_json() != r.decoder.to_json())
      throw ContractViolation("pretrained LM config differs from the recipe's decoder config");
    slm.load_decoder(lm);
  }
  check_compatible(enc, slm);

  const Splits s = task_splits(r);
  NBestCache cache;
  if (r.mode == AdaptMode::kAec) {
    cache = build_nbest_cache(enc, s.train, r.eval.beam, r.aec_n);
    NBestCache dev = build_nbest_cache(enc, s.dev, r.eval.beam, r.aec_n);
    cache.merge(dev);
  }
  Adam opt(slm.parameters(), r.adapt_train.adam_config());
  auto save = [&] {
    Checkpoint ck = speech_lm_checkpoint(slm, eck, opt.step_count());
    ck.meta["recipe"] = r.to_json();
    ck.save(out);
  };
  const std::uint64_t before = enc.hash();
  const TrainReport rep = adapt_decoder(slm, enc, opt, s.train, s.dev, r.adapt_train,
                                        r.mode == AdaptMode::kAec ? &cache : nullptr,
                                        train_hooks(hooks, to_string(r.mode), [&](int) { save(); }));
  save();
  write_curve(hooks, rep);
  json j = report_json(rep);
  j["command"] = "adapt";
  j["mode"] = to_string(r.mode);
  j["connector"] = parsed(slm.config().connector.to_json());
  j["encoder_hash_before"] = hex64(before);
  j["encoder_hash_after"] = hex64(enc.hash());
  j["checkpoint"] = out;
  j["recipe"] = r.to_json();
  return j;
}

json cmd_decode_eval(const Recipe& r, const std::string& enc_path, const std::string& dec_path) {
  const Splits s = task_splits(r);
  const Dataset& data = eval_split(s, r.eval.set);
  const Vocabulary tv = r.task.vocab();
  if (dec_path.empty()) {
    const SpeechEncoder enc = encoder_from_checkpoint(Checkpoint::load(enc_path));
    const WerReport greedy = ctc_wer(enc, data, tv, 1);
    const WerReport beam = ctc_wer(enc, data, tv, r.eval.beam);
    json j;
    j["command"] = "decode-eval";
    j["system"] = "ctc_beam";
    j["set"] = r.eval.set;
    j["utterances"] = data.utts.size();
    j["beam"] = r.eval.beam;
    j["wer"] = wer_json(beam);
    j["ctc_greedy_wer"] = wer_json(greedy);
    j["encoder_hash"] = hex64(enc.hash());
    j["recipe"] = r.to_json();
    return j;
  }
  const LoadedSystem sys = load_system(r, enc_path, dec_path);
  const SystemEval ev = evaluate_system(sys.slm, sys.enc, data, r.eval);
  json j = system_metrics(r, sys, data, ev, ctc_wer(sys.enc, data, tv, 1));
  j["command"] = "decode-eval";
  return j;
}

std::string cmd_sweep_tau(const Recipe& r, const std::string& enc_path, const std::string& dec_path) {
  const Splits s = task_splits(r);
  const Dataset& data = eval_split(s, r.eval.set);
  LoadedSystem sys = load_system(r, enc_path, dec_path);
  const auto inputs = eval_inputs(sys.slm, sys.enc, data, r.eval);
  std::ostringstream os;
  os.precision(9);
  os << "tau,wer,sub,del,ins,n_ref\n";
  for (double tau : r.eval.tau_grid) {
    ConnectorConfig c = sys.slm.config().connector;
    c.tau = tau;
    sys.slm.set_connector(c);
    const SystemEval ev = score_inputs(sys.slm, inputs, data, r.eval);
    os << tau << ',' << ev.wer.wer << ',' << ev.wer.sub << ',' << ev.wer.del << ',' << ev.wer.ins << ','
       << ev.wer.n_ref << '\n';
  }
  return os.str();
}

json cmd_swap(const Recipe& r, const std::string& enc_b, const std::string& dec_a) {
  const Splits s = task_splits(r);
  const Dataset& data = eval_split(s, r.eval.set);
  const LoadedSystem sys = load_system(r, enc_b, dec_a);
  const SystemEval ev = evaluate_system(sys.slm, sys.enc, data, r.eval);
  json j = system_metrics(r, sys, data, ev, ctc_wer(sys.enc, data, r.task.vocab(), 1));
  j["command"] = "swap";
  j["adapted_with_encoder_hash"] = sys.dec_meta.value("encoder_hash", std::string());
  return j;
}

}  // namespace ctcbridge
