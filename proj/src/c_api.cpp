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

#include "ctcbridge/c_api.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include "ctcbridge/pipeline.hpp"

struct ctcb_recipe {
  ctcbridge::Recipe recipe;
};

struct ctcb_encoder {
  ctcbridge::SpeechEncoder enc;
};

namespace {

using namespace ctcbridge;

thread_local std::string g_last_error;

ctcb_status fail(ctcb_status s, const std::string& msg) {
  g_last_error = msg;
  return s;
}

template <typename F>
ctcb_status guarded(F&& f) {
  try {
    f();
    return CTCB_OK;
  } catch (const ContractViolation& e) {
    return fail(CTCB_ERR_INVALID_ARGUMENT, e.what());
  } catch (const DomainError& e) {
    return fail(CTCB_ERR_DOMAIN, e.what());
  } catch (const FormatError& e) {
    return fail(CTCB_ERR_FORMAT, e.what());
  } catch (const IoError& e) {
    return fail(CTCB_ERR_IO, e.what());
  } catch (const NumericalError& e) {
    return fail(CTCB_ERR_NUMERICAL, e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail(CTCB_ERR_FORMAT, e.what());
  } catch (const std::exception& e) {
    return fail(CTCB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(CTCB_ERR_INTERNAL, "unknown exception");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void need(const void* p, const char* what) {
  if (!p) throw ContractViolation(std::string(what) + " is NULL");
}

std::string opt_str(const char* p) { return p ? std::string(p) : std::string(); }

CommandHooks hooks_from(const ctcb_run_options* o) {
  CommandHooks h;
  if (!o) return h;
  if (o->log) {
    ctcb_log_fn fn = o->log;
    void* user = o->user;
    h.log = [fn, user](const std::string& line) { fn(line.c_str(), user); };
  }
  h.checkpoint_every = o->checkpoint_every;
  h.curve_csv = opt_str(o->curve_csv);
  return h;
}

LogitGram gram(const float* logits, std::size_t frames, std::size_t classes) {
  need(logits, "logits");
  CTCB_REQUIRE(classes >= 2, "classes must be >= 2");
  return LogitGram(Tensor({frames, classes}, std::vector<float>(logits, logits + frames * classes)));
}

TokenSeq seq(const int32_t* p, std::size_t n) {
  if (n > 0) need(p, "label array");
  TokenSeq s;
  s.ids.assign(p, p + n);
  return s;
}

}  // namespace

extern "C" {

const char* ctcb_version(void) { return "0.1.0"; }

const char* ctcb_status_name(ctcb_status s) {
  switch (s) {
    case CTCB_OK: return "ok";
    case CTCB_ERR_INVALID_ARGUMENT: return "invalid_argument";
    case CTCB_ERR_DOMAIN: return "domain_error";
    case CTCB_ERR_FORMAT: return "format_error";
    case CTCB_ERR_IO: return "io_error";
    case CTCB_ERR_NUMERICAL: return "numerical_error";
    case CTCB_ERR_INTERNAL: return "internal_error";
  }
  return "unknown";
}

const char* ctcb_last_error(void) { return g_last_error.c_str(); }

void ctcb_string_free(char* s) { std::free(s); }

ctcb_status ctcb_recipe_reference(ctcb_recipe** out) {
  return guarded([&] {
    need(out, "out");
    *out = new ctcb_recipe{Recipe::reference()};
  });
}

ctcb_status ctcb_recipe_load(const char* path, ctcb_recipe** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ctcb_recipe{Recipe::from_file(path)};
  });
}

ctcb_status ctcb_recipe_parse(const char* json, ctcb_recipe** out) {
  return guarded([&] {
    need(json, "json");
    need(out, "out");
    *out = new ctcb_recipe{Recipe::from_json(nlohmann::json::parse(json))};
  });
}

ctcb_status ctcb_recipe_patch(ctcb_recipe* r, const char* patch_json) {
  return guarded([&] {
    need(r, "recipe");
    need(patch_json, "patch");
    r->recipe = r->recipe.patched(nlohmann::json::parse(patch_json));
  });
}

ctcb_status ctcb_recipe_set_task_file(ctcb_recipe* r, const char* path) {
  return guarded([&] {
    need(r, "recipe");
    need(path, "path");
    Recipe next = r->recipe;
    next.task = TaskSpec::from_file(path);
    r->recipe = Recipe::from_json(next.to_json());
  });
}

ctcb_status ctcb_recipe_to_json(const ctcb_recipe* r, char** out) {
  return guarded([&] {
    need(r, "recipe");
    need(out, "out");
    *out = dup(r->recipe.to_json().dump(2));
  });
}

void ctcb_recipe_free(ctcb_recipe* r) { delete r; }

ctcb_status ctcb_gen_data(const ctcb_recipe* r, const char* out_dir, char** out_json) {
  return guarded([&] {
    need(r, "recipe");
    need(out_dir, "out_dir");
    need(out_json, "out_json");
    *out_json = dup(cmd_gen_data(r->recipe, out_dir).dump(2));
  });
}

ctcb_status ctcb_train_encoder(const ctcb_recipe* r, const char* out_ckpt, const char* resume_ckpt,
                               const ctcb_run_options* opts, char** out_json) {
  return guarded([&] {
    need(r, "recipe");
    need(out_ckpt, "out_ckpt");
    need(out_json, "out_json");
    *out_json = dup(cmd_train_encoder(r->recipe, out_ckpt, opt_str(resume_ckpt), hooks_from(opts)).dump(2));
  });
}

ctcb_status ctcb_train_lm(const ctcb_recipe* r, const char* out_ckpt, const ctcb_run_options* opts,
                          char** out_json) {
  return guarded([&] {
    need(r, "recipe");
    need(out_ckpt, "out_ckpt");
    need(out_json, "out_json");
    *out_json = dup(cmd_train_lm(r->recipe, out_ckpt, hooks_from(opts)).dump(2));
  });
}

ctcb_status ctcb_adapt(const ctcb_recipe* r, const char* enc_ckpt, const char* lm_ckpt, const char* out_ckpt,
                       const ctcb_run_options* opts, char** out_json) {
  return guarded([&] {
    need(r, "recipe");
    need(enc_ckpt, "enc_ckpt");
    need(out_ckpt, "out_ckpt");
    need(out_json, "out_json");
    *out_json = dup(cmd_adapt(r->recipe, enc_ckpt, opt_str(lm_ckpt), out_ckpt, hooks_from(opts)).dump(2));
  });
}

ctcb_status ctcb_decode_eval(const ctcb_recipe* r, const char* enc_ckpt, const char* dec_ckpt, char** out_json) {
  return guarded([&] {
    need(r, "recipe");
    need(enc_ckpt, "enc_ckpt");
    need(out_json, "out_json");
    *out_json = dup(cmd_decode_eval(r->recipe, enc_ckpt, opt_str(dec_ckpt)).dump(2));
  });
}

ctcb_status ctcb_sweep_tau(const ctcb_recipe* r, const char* enc_ckpt, const char* dec_ckpt, char** out_csv) {
  return guarded([&] {
    need(r, "recipe");
    need(enc_ckpt, "enc_ckpt");
    need(dec_ckpt, "dec_ckpt");
    need(out_csv, "out_csv");
    *out_csv = dup(cmd_sweep_tau(r->recipe, enc_ckpt, dec_ckpt));
  });
}

ctcb_status ctcb_swap(const ctcb_recipe* r, const char* enc_b_ckpt, const char* dec_a_ckpt, char** out_json) {
  return guarded([&] {
    need(r, "recipe");
    need(enc_b_ckpt, "enc_b_ckpt");
    need(dec_a_ckpt, "dec_a_ckpt");
    need(out_json, "out_json");
    *out_json = dup(cmd_swap(r->recipe, enc_b_ckpt, dec_a_ckpt).dump(2));
  });
}

ctcb_status ctcb_checkpoint_header(const char* path, char** out_json) {
  return guarded([&] {
    need(path, "path");
    need(out_json, "out_json");
    const Checkpoint ck = Checkpoint::load(path);
    nlohmann::json manifest = nlohmann::json::array();
    for (const auto& [n, t] : ck.tensors) manifest.push_back({{"name", n}, {"shape", t.shape()}});
    *out_json = dup(nlohmann::json{{"meta", ck.meta}, {"tensors", manifest}}.dump(2));
  });
}

ctcb_status ctcb_checkpoint_resave(const char* in_path, const char* out_path) {
  return guarded([&] {
    need(in_path, "in_path");
    need(out_path, "out_path");
    Checkpoint::load(in_path).save(out_path);
  });
}

ctcb_status ctcb_encoder_load(const char* path, ctcb_encoder** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new ctcb_encoder{encoder_from_checkpoint(Checkpoint::load(path))};
  });
}

size_t ctcb_encoder_classes(const ctcb_encoder* e) { return e ? e->enc.classes() : 0; }

size_t ctcb_encoder_input_dim(const ctcb_encoder* e) { return e ? e->enc.config().input_dim : 0; }

ctcb_status ctcb_encoder_encode(const ctcb_encoder* e, const float* frames, size_t t, size_t f, float* logits,
                                size_t capacity, size_t* rows) {
  return guarded([&] {
    need(e, "encoder");
    need(frames, "frames");
    need(rows, "rows");
    CTCB_REQUIRE(f == e->enc.config().input_dim, "frame width does not match the encoder input dim");
    const LogitGram z = e->enc.encode(Tensor({t, f}, std::vector<float>(frames, frames + t * f)));
    *rows = z.frames();
    CTCB_REQUIRE(logits && capacity >= z.logits.size(), "logits buffer too small");
    std::memcpy(logits, z.logits.data(), z.logits.size() * sizeof(float));
  });
}

void ctcb_encoder_free(ctcb_encoder* e) { delete e; }

ctcb_status ctcb_ctc_loss(const float* logits, size_t frames, size_t classes, const int32_t* labels,
                          size_t n_labels, double* loss, int* feasible) {
  return guarded([&] {
    need(loss, "loss");
    bool ok = true;
    *loss = ctc_loss_value(gram(logits, frames, classes), seq(labels, n_labels), &ok);
    if (feasible) *feasible = ok ? 1 : 0;
  });
}

ctcb_status ctcb_ctc_greedy(const float* logits, size_t frames, size_t classes, int32_t* out, size_t capacity,
                            size_t* n_out) {
  return guarded([&] {
    need(n_out, "n_out");
    const TokenSeq y = greedy_decode(to_posteriorgram(gram(logits, frames, classes)));
    *n_out = y.size();
    CTCB_REQUIRE(y.empty() || (out && capacity >= y.size()), "output buffer too small");
    for (std::size_t i = 0; i < y.size(); ++i) out[i] = y.ids[i];
  });
}

ctcb_status ctcb_wer(const int32_t* ref, size_t n_ref, const int32_t* hyp, size_t n_hyp, double* wer_out,
                     size_t* sub, size_t* del, size_t* ins) {
  return guarded([&] {
    need(wer_out, "wer");
    const WerReport w = wer(seq(ref, n_ref), seq(hyp, n_hyp));
    *wer_out = w.wer;
    if (sub) *sub = w.sub;
    if (del) *del = w.del;
    if (ins) *ins = w.ins;
  });
}

}  // extern "C"
