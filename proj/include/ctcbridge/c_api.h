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

/* C interface to ctcbridge.
 *
 * Every call returns a ctcb_status. On failure the message is available from
 * ctcb_last_error() on the same thread until the next failing call. Strings
 * returned through char** out-parameters are heap allocated and must be
 * released with ctcb_string_free(). Handles are opaque and released with
 * their *_free function; passing NULL to a *_free function is a no-op.
 */

#ifndef CTCBRIDGE_C_API_H_
#define CTCBRIDGE_C_API_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define CTCB_API __declspec(dllexport)
#else
#define CTCB_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ctcb_status {
  CTCB_OK = 0,
  CTCB_ERR_INVALID_ARGUMENT = 1, /* null pointer or broken precondition */
  CTCB_ERR_DOMAIN = 2,           /* value outside an operation's domain */
  CTCB_ERR_FORMAT = 3,           /* malformed config or file */
  CTCB_ERR_IO = 4,
  CTCB_ERR_NUMERICAL = 5, /* training diverged */
  CTCB_ERR_INTERNAL = 6
} ctcb_status;

typedef struct ctcb_recipe ctcb_recipe;
typedef struct ctcb_encoder ctcb_encoder;

typedef void (*ctcb_log_fn)(const char* line, void* user);

typedef struct ctcb_run_options {
  ctcb_log_fn log;       /* may be NULL */
  void* user;            /* passed to log */
  int checkpoint_every;  /* periodic checkpoints while training; 0 = off */
  const char* curve_csv; /* loss curve destination; NULL = none */
} ctcb_run_options;

CTCB_API const char* ctcb_version(void);
CTCB_API const char* ctcb_status_name(ctcb_status s);
CTCB_API const char* ctcb_last_error(void);
CTCB_API void ctcb_string_free(char* s);

/* Recipes. */
CTCB_API ctcb_status ctcb_recipe_reference(ctcb_recipe** out);
CTCB_API ctcb_status ctcb_recipe_load(const char* path, ctcb_recipe** out);
CTCB_API ctcb_status ctcb_recipe_parse(const char* json, ctcb_recipe** out);
/* RFC 7386 merge patch over the recipe's JSON form. */
CTCB_API ctcb_status ctcb_recipe_patch(ctcb_recipe* r, const char* patch_json);
/* Replaces the task with one read from a task spec file. */
CTCB_API ctcb_status ctcb_recipe_set_task_file(ctcb_recipe* r, const char* path);
CTCB_API ctcb_status ctcb_recipe_to_json(const ctcb_recipe* r, char** out);
CTCB_API void ctcb_recipe_free(ctcb_recipe* r);

/* Commands. lm_ckpt and dec_ckpt may be NULL, resume_ckpt and opts too. */
CTCB_API ctcb_status ctcb_gen_data(const ctcb_recipe* r, const char* out_dir, char** out_json);
CTCB_API ctcb_status ctcb_train_encoder(const ctcb_recipe* r, const char* out_ckpt, const char* resume_ckpt,
                                        const ctcb_run_options* opts, char** out_json);
CTCB_API ctcb_status ctcb_train_lm(const ctcb_recipe* r, const char* out_ckpt, const ctcb_run_options* opts,
                                   char** out_json);
CTCB_API ctcb_status ctcb_adapt(const ctcb_recipe* r, const char* enc_ckpt, const char* lm_ckpt,
                                const char* out_ckpt, const ctcb_run_options* opts, char** out_json);
CTCB_API ctcb_status ctcb_decode_eval(const ctcb_recipe* r, const char* enc_ckpt, const char* dec_ckpt,
                                      char** out_json);
CTCB_API ctcb_status ctcb_sweep_tau(const ctcb_recipe* r, const char* enc_ckpt, const char* dec_ckpt,
                                    char** out_csv);
CTCB_API ctcb_status ctcb_swap(const ctcb_recipe* r, const char* enc_b_ckpt, const char* dec_a_ckpt,
                               char** out_json);

/* Checkpoints. */
CTCB_API ctcb_status ctcb_checkpoint_header(const char* path, char** out_json);
/* Load then save; the output is byte-identical to the input. */
CTCB_API ctcb_status ctcb_checkpoint_resave(const char* in_path, const char* out_path);

/* Encoders. Logits are [rows, classes] row-major; the last class is blank. */
CTCB_API ctcb_status ctcb_encoder_load(const char* path, ctcb_encoder** out);
CTCB_API size_t ctcb_encoder_classes(const ctcb_encoder* e);
CTCB_API size_t ctcb_encoder_input_dim(const ctcb_encoder* e);
CTCB_API ctcb_status ctcb_encoder_encode(const ctcb_encoder* e, const float* frames, size_t t, size_t f,
                                         float* logits, size_t capacity, size_t* rows);
CTCB_API void ctcb_encoder_free(ctcb_encoder* e);

/* CTC and metrics on raw arrays. classes = V + 1. */
CTCB_API ctcb_status ctcb_ctc_loss(const float* logits, size_t frames, size_t classes, const int32_t* labels,
                                   size_t n_labels, double* loss, int* feasible);
CTCB_API ctcb_status ctcb_ctc_greedy(const float* logits, size_t frames, size_t classes, int32_t* out,
                                     size_t capacity, size_t* n_out);
CTCB_API ctcb_status ctcb_wer(const int32_t* ref, size_t n_ref, const int32_t* hyp, size_t n_hyp, double* wer,
                              size_t* sub, size_t* del, size_t* ins);

#ifdef __cplusplus
}
#endif

#endif /* CTCBRIDGE_C_API_H_ */
