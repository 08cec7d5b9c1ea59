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

// ctcbridge command-line driver. Links only the C API.
//
// Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or config
// error (bad flags, unreadable or malformed inputs, incompatible models).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ctcbridge/c_api.h"
#include "json.hpp"

namespace {

using nlohmann::json;

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Failure {
  int code;
  std::string message;
};

int exit_code(ctcb_status s) {
  switch (s) {
    case CTCB_OK: return 0;
    case CTCB_ERR_INVALID_ARGUMENT:
    case CTCB_ERR_DOMAIN:
    case CTCB_ERR_FORMAT:
    case CTCB_ERR_IO: return kExitUsage;
    default: return kExitRuntime;
  }
}

void check(ctcb_status s) {
  if (s != CTCB_OK) throw Failure{exit_code(s), std::string(ctcb_status_name(s)) + ": " + ctcb_last_error()};
}

std::string take(char* s) {
  std::string out(s ? s : "");
  ctcb_string_free(s);
  return out;
}

void log_line(const char* line, void*) { std::fprintf(stderr, "%s\n", line); }

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Failure{kExitRuntime, "cannot write '" + path + "'"};
  out << text;
}

void emit(const std::string& text, const std::string& out_path) {
  std::cout << text;
  if (!text.empty() && text.back() != '\n') std::cout << '\n';
  if (!out_path.empty()) write_file(out_path, text.back() == '\n' ? text : text + "\n");
}

// Builds a merge patch from the flags that were given.
struct Patch {
  json j = json::object();
  void set(std::initializer_list<const char*> path, json value) {
    json* cur = &j;
    auto it = path.begin();
    for (; std::next(it) != path.end(); ++it) cur = &(*cur)[*it];
    (*cur)[*it] = std::move(value);
  }
};

template <typename T>
void put(Patch& p, const std::optional<T>& v, std::initializer_list<const char*> path) {
  if (v) p.set(path, *v);
}

std::vector<double> parse_grid(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw Failure{kExitUsage, "bad --grid entry '" + item + "'"};
    }
  }
  if (out.empty()) throw Failure{kExitUsage, "--grid is empty"};
  return out;
}

struct Args {
  std::string config, spec, out, out_dir, resume, curve, encoder, lm, decoder, mode, set, grid;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps, k, beam, nbest, lm_beam, checkpoint_every;
  std::optional<double> tau, blk;
};

ctcb_recipe* load_recipe(const Args& a, const Patch& patch) {
  ctcb_recipe* r = nullptr;
  if (a.config.empty()) {
    check(ctcb_recipe_reference(&r));
  } else {
    check(ctcb_recipe_load(a.config.c_str(), &r));
  }
  if (!a.spec.empty()) check(ctcb_recipe_set_task_file(r, a.spec.c_str()));
  if (!patch.j.empty()) check(ctcb_recipe_patch(r, patch.j.dump().c_str()));
  return r;
}

struct RecipeHandle {
  ctcb_recipe* r;
  ~RecipeHandle() { ctcb_recipe_free(r); }
};

ctcb_run_options run_options(const Args& a) {
  ctcb_run_options o{};
  o.log = log_line;
  o.checkpoint_every = a.checkpoint_every.value_or(0);
  o.curve_csv = a.curve.empty() ? nullptr : a.curve.c_str();
  return o;
}

const char* opt_path(const std::string& s) { return (s.empty() || s == "none") ? nullptr : s.c_str(); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctcbridge: CTC posteriors as decoder inputs, on a synthetic speech task"};
  app.require_subcommand(1);
  Args a;
  app.add_option("--config", a.config, "Recipe JSON (default: built-in reference recipe)");

  auto* gen = app.add_subcommand("gen-data", "Generate the task's train/dev/test splits");
  gen->add_option("--spec", a.spec, "Task spec JSON (default: the recipe's task)");
  gen->add_option("--out", a.out_dir, "Output directory")->required();
  gen->add_option("--seed", a.seed, "Data seed");

  auto* tenc = app.add_subcommand("train-encoder", "Train the CTC encoder");
  tenc->add_option("--out", a.out, "Output checkpoint")->required();
  tenc->add_option("--resume", a.resume, "Continue from this checkpoint");
  tenc->add_option("--curve", a.curve, "Loss curve CSV");
  tenc->add_option("--checkpoint-every", a.checkpoint_every, "Steps between periodic checkpoints");
  tenc->add_option("--seed", a.seed, "Initialization and training seed");
  tenc->add_option("--steps", a.steps, "Training steps");

  auto* tlm = app.add_subcommand("train-lm", "Pretrain the decoder on task text");
  tlm->add_option("--out", a.out, "Output checkpoint")->required();
  tlm->add_option("--curve", a.curve, "Loss curve CSV");
  tlm->add_option("--checkpoint-every", a.checkpoint_every, "Steps between periodic checkpoints");
  tlm->add_option("--seed", a.seed, "Initialization and training seed");
  tlm->add_option("--steps", a.steps, "Training steps");

  auto* adapt = app.add_subcommand("adapt", "Adapt the decoder to a frozen encoder");
  adapt->add_option("--mode", a.mode, "lego, lego_star, topS, topP, adapter, sp, aec or text");
  adapt->add_option("--encoder", a.encoder, "Encoder checkpoint")->required();
  adapt->add_option("--lm", a.lm, "Pretrained LM checkpoint (default: random init)");
  adapt->add_option("--out", a.out, "Output checkpoint")->required();
  adapt->add_option("--curve", a.curve, "Loss curve CSV");
  adapt->add_option("--checkpoint-every", a.checkpoint_every, "Steps between periodic checkpoints");
  adapt->add_option("--tau", a.tau, "Connector temperature");
  adapt->add_option("--blk-downscale", a.blk, "Blank downscale factor");
  adapt->add_option("--k", a.k, "K for topS / topP");
  adapt->add_option("--beam", a.beam, "CTC beam for aec n-best lists");
  adapt->add_option("--nbest", a.nbest, "Hypotheses per aec input");
  adapt->add_option("--seed", a.seed, "Training seed");
  adapt->add_option("--steps", a.steps, "Training steps");

  auto add_eval = [&](CLI::App* c) {
    c->add_option("--set", a.set, "dev or test");
    c->add_option("--tau", a.tau, "Connector temperature override");
    c->add_option("--blk-downscale", a.blk, "Blank downscale override");
    c->add_option("--beam", a.beam, "CTC beam width (default 10)");
    c->add_option("--nbest", a.nbest, "Hypotheses per aec input");
    c->add_option("--lm-beam", a.lm_beam, "Decoder beam width (default 1)");
    c->add_option("--out", a.out, "Also write the result here");
  };
  auto* dev = app.add_subcommand("decode-eval", "Decode a split and report WER");
  dev->add_option("--encoder", a.encoder, "Encoder checkpoint")->required();
  dev->add_option("--decoder", a.decoder, "Adapted checkpoint, or 'none' for CTC beam search");
  add_eval(dev);

  auto* sweep = app.add_subcommand("sweep-tau", "WER over a temperature grid");
  sweep->add_option("--encoder", a.encoder, "Encoder checkpoint")->required();
  sweep->add_option("--decoder", a.decoder, "Adapted checkpoint")->required();
  sweep->add_option("--grid", a.grid, "Comma-separated temperatures");
  add_eval(sweep);

  auto* swap = app.add_subcommand("swap", "Evaluate an adapted decoder with another encoder");
  swap->add_option("--encoder", a.encoder, "Encoder B checkpoint")->required();
  swap->add_option("--decoder", a.decoder, "Checkpoint adapted with encoder A")->required();
  add_eval(swap);

  auto* show = app.add_subcommand("recipe", "Print the effective recipe");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    Patch p;
    if (*gen) {
      put(p, a.seed, {"data_seed"});
    } else if (*tenc) {
      put(p, a.seed, {"encoder", "model", "seed"});
      put(p, a.seed, {"encoder", "train", "seed"});
      put(p, a.steps, {"encoder", "train", "steps"});
    } else if (*tlm) {
      put(p, a.seed, {"lm", "decoder", "seed"});
      put(p, a.seed, {"lm", "train", "seed"});
      put(p, a.steps, {"lm", "train", "steps"});
    } else if (*adapt) {
      if (!a.mode.empty()) p.set({"adapt", "mode"}, a.mode);
      put(p, a.tau, {"adapt", "connector", "tau"});
      put(p, a.blk, {"adapt", "connector", "blk_downscale"});
      put(p, a.k, {"adapt", "connector", "k"});
      put(p, a.beam, {"eval", "beam"});
      put(p, a.nbest, {"adapt", "aec_n"});
      put(p, a.seed, {"adapt", "train", "seed"});
      put(p, a.steps, {"adapt", "train", "steps"});
    } else if (*dev || *sweep || *swap) {
      if (!a.set.empty()) p.set({"eval", "set"}, a.set);
      put(p, a.tau, {"eval", "tau"});
      put(p, a.blk, {"eval", "blk_downscale"});
      put(p, a.beam, {"eval", "beam"});
      put(p, a.nbest, {"eval", "nbest"});
      put(p, a.lm_beam, {"eval", "lm_beam"});
      if (!a.grid.empty()) p.set({"eval", "tau_grid"}, parse_grid(a.grid));
    }
    if (a.nbest && a.beam && *a.nbest > *a.beam) throw Failure{kExitUsage, "--nbest cannot exceed --beam"};

    RecipeHandle rh{load_recipe(a, p)};
    const ctcb_recipe* r = rh.r;
    char* out = nullptr;
    const ctcb_run_options ro = run_options(a);
    if (*gen) {
      check(ctcb_gen_data(r, a.out_dir.c_str(), &out));
      emit(take(out), "");
    } else if (*tenc) {
      check(ctcb_train_encoder(r, a.out.c_str(), opt_path(a.resume), &ro, &out));
      emit(take(out), "");
    } else if (*tlm) {
      check(ctcb_train_lm(r, a.out.c_str(), &ro, &out));
      emit(take(out), "");
    } else if (*adapt) {
      check(ctcb_adapt(r, a.encoder.c_str(), opt_path(a.lm), a.out.c_str(), &ro, &out));
      emit(take(out), "");
    } else if (*dev) {
      check(ctcb_decode_eval(r, a.encoder.c_str(), opt_path(a.decoder), &out));
      emit(take(out), a.out);
    } else if (*sweep) {
      check(ctcb_sweep_tau(r, a.encoder.c_str(), a.decoder.c_str(), &out));
      emit(take(out), a.out);
    } else if (*swap) {
      check(ctcb_swap(r, a.encoder.c_str(), a.decoder.c_str(), &out));
      emit(take(out), a.out);
    } else if (*show) {
      check(ctcb_recipe_to_json(r, &out));
      emit(take(out), "");
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.message.c_str());
    return f.code;
  }
  return 0;
}
