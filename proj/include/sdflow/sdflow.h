// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef SDFLOW_SDFLOW_H_
#define SDFLOW_SDFLOW_H_

#include <stddef.h>
#include <stdint.h>

#if defined(SDFLOW_BUILDING_LIBRARY)
#define SDFLOW_API __attribute__((visibility("default")))
#else
#define SDFLOW_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

// Status codes. Every fallible call returns one; sdflow_last_error() holds the
// message for the calling thread.
typedef enum sdflow_status {
  SDFLOW_OK = 0,
  SDFLOW_E_DIMENSION = 1,
  SDFLOW_E_PARAMETER = 2,
  SDFLOW_E_CONFIG = 3,
  SDFLOW_E_DATA = 4,
  SDFLOW_E_CONTRACT = 5,
  SDFLOW_E_LOAD = 6,
  SDFLOW_E_DIVERGENCE = 7,
  SDFLOW_E_IO = 8,
  SDFLOW_E_INTERNAL = 99
} sdflow_status;

typedef enum sdflow_log_level {
  SDFLOW_LOG_DEBUG = 0,
  SDFLOW_LOG_INFO = 1,
  SDFLOW_LOG_WARN = 2,
  SDFLOW_LOG_ERROR = 3,
  SDFLOW_LOG_OFF = 4
} sdflow_log_level;

SDFLOW_API const char* sdflow_version(void);
SDFLOW_API const char* sdflow_last_error(void);
SDFLOW_API const char* sdflow_status_name(sdflow_status status);
SDFLOW_API void sdflow_set_threads(int threads);
SDFLOW_API void sdflow_set_log_level(sdflow_log_level level);

// ---- configuration ----------------------------------------------------------
// Layered key=value configuration: built-in defaults, then a file, then
// explicit overrides. Later layers win.
typedef struct sdflow_config sdflow_config;

SDFLOW_API sdflow_status sdflow_config_new(sdflow_config** out);
SDFLOW_API void sdflow_config_free(sdflow_config* cfg);
SDFLOW_API sdflow_status sdflow_config_load_file(sdflow_config* cfg, const char* path);
SDFLOW_API sdflow_status sdflow_config_set(sdflow_config* cfg, const char* key, const char* value);
// Copies the value (NUL-terminated) into buf when it fits. *needed receives
// the required size including the terminator.
SDFLOW_API sdflow_status sdflow_config_get(const sdflow_config* cfg, const char* key, char* buf, size_t cap,
                                           size_t* needed);
// Resolved config as sorted key=value lines, same buffer contract.
SDFLOW_API sdflow_status sdflow_config_text(const sdflow_config* cfg, char* buf, size_t cap, size_t* needed);

// ---- commands ---------------------------------------------------------------
// Each command writes manifest.txt before any work, then its outputs,
// outputs.txt and checks.txt into out_dir. NULL paths mean "not given".
typedef struct sdflow_result {
  int checks;
  int failed;
} sdflow_result;

SDFLOW_API sdflow_status sdflow_train_vqvae(const sdflow_config* cfg, const char* out_dir, sdflow_result* result);
SDFLOW_API sdflow_status sdflow_train_flow(const sdflow_config* cfg, const char* stage1, const char* out_dir,
                                           sdflow_result* result);
SDFLOW_API sdflow_status sdflow_generate(const sdflow_config* cfg, const char* stage2, const char* out_dir,
                                         sdflow_result* result);
SDFLOW_API sdflow_status sdflow_evaluate(const sdflow_config* cfg, const char* tokenizer, const char* synthetic_csv,
                                         const char* real_csv, const char* train_csv, const char* out_dir,
                                         sdflow_result* result);
// which: "spectrum", "transport", "pinsker" or "kde-rate".
SDFLOW_API sdflow_status sdflow_analyze(const sdflow_config* cfg, const char* which, const char* stage2,
                                        const char* baseline, const char* out_dir, sdflow_result* result);
SDFLOW_API sdflow_status sdflow_forecast(const sdflow_config* cfg, const char* stage2, const char* history_csv,
                                         const char* out_dir, sdflow_result* result);
// axis: "prior", "rank", "bandwidth", "steps" or "heldout-fraction".
SDFLOW_API sdflow_status sdflow_ablate(const sdflow_config* cfg, const char* axis, const char* stage1,
                                       const char* out_dir, sdflow_result* result);

// ---- trained models ---------------------------------------------------------
typedef struct sdflow_model sdflow_model;

typedef struct sdflow_model_info {
  size_t seq_len;
  size_t features;
  size_t codebook_size;
  size_t code_dim;
  size_t latent_len;
  int anchored;  // 1 for the anchored prior, 0 for the Gaussian prior
} sdflow_model_info;

// Loads a Stage-2 checkpoint (tokenizer and flow).
SDFLOW_API sdflow_status sdflow_model_load(const char* path, sdflow_model** out);
SDFLOW_API void sdflow_model_free(sdflow_model* model);
SDFLOW_API sdflow_status sdflow_model_info_get(const sdflow_model* model, sdflow_model_info* info);

typedef struct sdflow_generate_options {
  size_t n;
  uint64_t seed;
  size_t steps;  // 0 uses the trained default
  double tau;    // <= 0 uses the trained default
  int kde_only;  // 1 decodes prior samples without integrating the flow
} sdflow_generate_options;

// Writes n * seq_len * features floats (row-major windows, normalized scale) to out,
// which must hold at least that many values.
SDFLOW_API sdflow_status sdflow_model_generate(const sdflow_model* model, const sdflow_generate_options* options,
                                               float* out, size_t capacity);

#ifdef __cplusplus
}  // extern "C"
#endif

#endif  // SDFLOW_SDFLOW_H_
