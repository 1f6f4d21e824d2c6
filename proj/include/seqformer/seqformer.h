/* SPDX-License-Identifier: Apache-2.0 */
#ifndef SEQFORMER_SEQFORMER_H
#define SEQFORMER_SEQFORMER_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SQF_API __declspec(dllexport)
#else
#define SQF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum sqf_status {
  SQF_OK = 0,
  SQF_ERR_ARGUMENT = 1, /* null pointer or malformed argument */
  SQF_ERR_SHAPE = 2,
  SQF_ERR_NUMERIC = 3,
  SQF_ERR_CONFIG = 4,
  SQF_ERR_CONTRACT = 5,
  SQF_ERR_STATE = 6,
  SQF_ERR_INDEX = 7,
  SQF_ERR_RANGE = 8,
  SQF_ERR_FORMAT = 9,
  SQF_ERR_CORRUPTION = 10,
  SQF_ERR_INPUT = 11,
  SQF_ERR_ORACLE = 12,
  SQF_ERR_IO = 13,
  SQF_ERR_INTERNAL = 14
} sqf_status;

typedef struct sqf_model sqf_model;

typedef struct sqf_model_info {
  size_t d_model;
  size_t heads;
  size_t key_dim;
  size_t layers;
  size_t vocab_size; /* 0 for classifiers */
  size_t classes;    /* 0 for language models */
  size_t n_max;
  size_t parameters;
  int is_classifier;
  int causal;
} sqf_model_info;

/* Per-step training observer. */
typedef void (*sqf_step_fn)(size_t step, double loss, void* user);
/* One gradient-check row per parameter tensor. */
typedef void (*sqf_gradcheck_fn)(const char* name, size_t entries, double max_rel_error, size_t flagged,
                                 void* user);
/* One selftest row per invariant. */
typedef void (*sqf_selftest_fn)(const char* name, int passed, double measured, double bound, void* user);

SQF_API const char* sqf_version(void);
SQF_API const char* sqf_status_name(sqf_status status);
/* Message of the last failed call on this thread, "" if none. */
SQF_API const char* sqf_last_error(void);
/* Process exit code for a status: 0 ok, 2 usage/config/input errors, 1 otherwise. */
SQF_API int sqf_exit_code(sqf_status status);

/* seed_override may be NULL to use the seed from the config file.
   corpus_path may be NULL to use the corpus key of the config.
   Writes model.sqfm, loss.csv and vocab.txt into out_dir. */
SQF_API sqf_status sqf_train_lm(const char* config_path, const char* corpus_path, const char* out_dir,
                                const uint64_t* seed_override, sqf_step_fn on_step, void* user);

/* data_dir holds train/<class>/NAME.pgm and optionally test/<class>/NAME.pgm.
   Writes model.sqfm, loss.csv and metrics.csv into out_dir. */
SQF_API sqf_status sqf_train_cls(const char* config_path, const char* data_dir, const char* out_dir,
                                 const uint64_t* seed_override, sqf_step_fn on_step, void* user);

SQF_API sqf_status sqf_model_load(const char* path, sqf_model** out);
SQF_API sqf_status sqf_model_save(const sqf_model* model, const char* path);
SQF_API void sqf_model_free(sqf_model* model);
SQF_API sqf_status sqf_model_info_get(const sqf_model* model, sqf_model_info* out);
/* Class name of a classifier label, or NULL when out of range or unnamed.
   The pointer stays valid until the model is freed. */
SQF_API const char* sqf_model_label(const sqf_model* model, size_t label);

/* Prompt plus `steps` generated symbols. temperature <= 0 is rejected unless
   greedy is set. The result is released with sqf_string_free. */
SQF_API sqf_status sqf_generate(const sqf_model* model, const char* prompt, size_t steps, int greedy,
                                double temperature, uint64_t seed, int use_cache, char** out_text);
SQF_API void sqf_string_free(char* text);

/* Writes up to probs_len class probabilities when probs is not NULL. */
SQF_API sqf_status sqf_classify(const sqf_model* model, const char* pgm_path, size_t* out_class, double* probs,
                                size_t probs_len);

/* input is text for language models and a PGM path for classifiers.
   Writes attn_L<layer>_H<head>.txt files into out_dir. */
SQF_API sqf_status sqf_inspect_attention(const sqf_model* model, const char* input, const char* out_dir,
                                         size_t* files_written);

/* tol < 0 uses the config tolerance. *passed is 1 iff every entry is within tol. */
SQF_API sqf_status sqf_gradcheck(const char* config_path, const uint64_t* seed_override, double tol,
                                 int inject_adjoint_fault, sqf_gradcheck_fn on_row, void* user, int* passed);

SQF_API sqf_status sqf_selftest(uint64_t seed, sqf_selftest_fn on_row, void* user, int* passed);

/* Synthetic PGM dataset: kinds is a comma list from bright, dark, striped,
   checker. Writes out_dir/train/<kind>/ and out_dir/test/<kind>/. */
SQF_API sqf_status sqf_make_images(const char* out_dir, const char* kinds, size_t train_per_class,
                                   size_t test_per_class, size_t height, size_t width, uint64_t seed);

#ifdef __cplusplus
}
#endif

#endif /* SEQFORMER_SEQFORMER_H */
