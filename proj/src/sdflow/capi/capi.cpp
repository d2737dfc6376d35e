// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstring>
#include <exception>
#include <new>
#include <string>

#include "sdflow/common/error.hpp"
#include "sdflow/common/log.hpp"
#include "sdflow/common/parallel.hpp"
#include "sdflow/data/checkpoint.hpp"
#include "sdflow/pipeline/pipeline.hpp"
#include "sdflow/sdflow.h"

struct sdflow_config {
  sdflow::data::KeyValueConfig kv;
};

struct sdflow_model {
  sdflow::vq::Tokenizer tok;
  sdflow::flow::FlowModel flow;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
sdflow_status guarded(F&& f) {
  try {
    f();
    g_last_error.clear();
    return SDFLOW_OK;
  } catch (const sdflow::Error& e) {
    g_last_error = e.what();
    return static_cast<sdflow_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return SDFLOW_E_INTERNAL;
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

void need(const void* p, const char* what) {
  if (!p) throw sdflow::ParameterError(std::string(what) + " must not be NULL");
}

void copy_out(const std::string& s, char* buf, size_t cap, size_t* needed) {
  if (needed) *needed = s.size() + 1;
  if (buf && cap > s.size()) std::memcpy(buf, s.c_str(), s.size() + 1);
  else if (buf && cap > 0) throw sdflow::ParameterError("buffer too small");
}

template <typename Cmd>
sdflow_status run_command(const char* name, const sdflow_config* cfg, const char* out_dir, sdflow_result* result,
                          Cmd&& cmd) {
  return guarded([&] {
    need(cfg, "config");
    need(out_dir, "out_dir");
    const auto run = sdflow::pipeline::start_run(name, cfg->kv, out_dir);
    auto res = cmd(run);
    sdflow::pipeline::finish_run(run, res);
    if (result) {
      result->checks = static_cast<int>(res.checks.items.size());
      result->failed = static_cast<int>(res.checks.failures());
    }
  });
}

}  // namespace

extern "C" {

const char* sdflow_version(void) { return SDFLOW_GIT_HASH; }

const char* sdflow_last_error(void) { return g_last_error.c_str(); }

const char* sdflow_status_name(sdflow_status status) {
  switch (status) {
    case SDFLOW_OK: return "ok";
    case SDFLOW_E_DIMENSION: return "dimension";
    case SDFLOW_E_PARAMETER: return "parameter";
    case SDFLOW_E_CONFIG: return "config";
    case SDFLOW_E_DATA: return "data";
    case SDFLOW_E_CONTRACT: return "contract";
    case SDFLOW_E_LOAD: return "load";
    case SDFLOW_E_DIVERGENCE: return "divergence";
    case SDFLOW_E_IO: return "io";
    case SDFLOW_E_INTERNAL: return "internal";
  }
  return "unknown";
}

void sdflow_set_threads(int threads) { sdflow::set_thread_count(threads); }

void sdflow_set_log_level(sdflow_log_level level) {
  sdflow::log::set_level(static_cast<sdflow::log::Level>(level));
}

sdflow_status sdflow_config_new(sdflow_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new sdflow_config{sdflow::pipeline::default_config()};
  });
}

void sdflow_config_free(sdflow_config* cfg) { delete cfg; }

sdflow_status sdflow_config_load_file(sdflow_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    auto file = sdflow::data::KeyValueConfig::load(path);
    sdflow::data::KeyValueConfig tagged;
    for (const auto& [k, v] : file.values()) tagged.set(k, v, sdflow::data::KeyValueConfig::Origin::kFile);
    cfg->kv.merge(tagged);
  });
}

sdflow_status sdflow_config_set(sdflow_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    if (!*key) throw sdflow::ConfigError("empty config key");
    cfg->kv.set(key, value, sdflow::data::KeyValueConfig::Origin::kFlag);
  });
}

sdflow_status sdflow_config_get(const sdflow_config* cfg, const char* key, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    if (!cfg->kv.has(key)) throw sdflow::ConfigError(std::string("unknown config key '") + key + "'");
    copy_out(cfg->kv.get(key), buf, cap, needed);
  });
}

sdflow_status sdflow_config_text(const sdflow_config* cfg, char* buf, size_t cap, size_t* needed) {
  return guarded([&] {
    need(cfg, "config");
    copy_out(cfg->kv.to_text(), buf, cap, needed);
  });
}

sdflow_status sdflow_train_vqvae(const sdflow_config* cfg, const char* out_dir, sdflow_result* result) {
  return run_command("train-vqvae", cfg, out_dir, result,
                     [&](const auto& run) { return sdflow::pipeline::cmd_train_vqvae(run); });
}

sdflow_status sdflow_train_flow(const sdflow_config* cfg, const char* stage1, const char* out_dir,
                                sdflow_result* result) {
  return run_command("train-flow", cfg, out_dir, result, [&](const auto& run) {
    need(stage1, "stage1");
    return sdflow::pipeline::cmd_train_flow(run, stage1);
  });
}

sdflow_status sdflow_generate(const sdflow_config* cfg, const char* stage2, const char* out_dir,
                              sdflow_result* result) {
  return run_command("generate", cfg, out_dir, result, [&](const auto& run) {
    need(stage2, "stage2");
    return sdflow::pipeline::cmd_generate(run, stage2);
  });
}

sdflow_status sdflow_evaluate(const sdflow_config* cfg, const char* tokenizer, const char* synthetic_csv,
                              const char* real_csv, const char* train_csv, const char* out_dir,
                              sdflow_result* result) {
  return run_command("evaluate", cfg, out_dir, result, [&](const auto& run) {
    need(tokenizer, "tokenizer");
    need(synthetic_csv, "synthetic_csv");
    return sdflow::pipeline::cmd_evaluate(run, tokenizer, synthetic_csv, str(real_csv), str(train_csv));
  });
}

sdflow_status sdflow_analyze(const sdflow_config* cfg, const char* which, const char* stage2, const char* baseline,
                             const char* out_dir, sdflow_result* result) {
  return run_command("analyze", cfg, out_dir, result, [&](const auto& run) {
    need(which, "which");
    return sdflow::pipeline::cmd_analyze(run, which, str(stage2), str(baseline));
  });
}

sdflow_status sdflow_forecast(const sdflow_config* cfg, const char* stage2, const char* history_csv,
                              const char* out_dir, sdflow_result* result) {
  return run_command("forecast", cfg, out_dir, result, [&](const auto& run) {
    need(stage2, "stage2");
    need(history_csv, "history_csv");
    return sdflow::pipeline::cmd_forecast(run, stage2, history_csv);
  });
}

sdflow_status sdflow_ablate(const sdflow_config* cfg, const char* axis, const char* stage1, const char* out_dir,
                            sdflow_result* result) {
  return run_command("ablate", cfg, out_dir, result, [&](const auto& run) {
    need(axis, "axis");
    return sdflow::pipeline::cmd_ablate(run, axis, str(stage1));
  });
}

sdflow_status sdflow_model_load(const char* path, sdflow_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    const auto ckpt = sdflow::data::load_checkpoint(path);
    auto tok = sdflow::vq::Tokenizer::load(ckpt);
    auto flow = sdflow::flow::FlowModel::load(ckpt);
    sdflow::flow::check_compatible(tok.config(), flow.config);
    *out = new sdflow_model{std::move(tok), std::move(flow)};
  });
}

void sdflow_model_free(sdflow_model* model) { delete model; }

sdflow_status sdflow_model_info_get(const sdflow_model* model, sdflow_model_info* info) {
  return guarded([&] {
    need(model, "model");
    need(info, "info");
    const auto& vc = model->tok.config();
    info->seq_len = vc.seq_len;
    info->features = vc.features;
    info->codebook_size = vc.codebook_size;
    info->code_dim = vc.code_dim;
    info->latent_len = vc.latent_len();
    info->anchored = model->flow.config.prior == sdflow::flow::PriorKind::kAnchored ? 1 : 0;
  });
}

sdflow_status sdflow_model_generate(const sdflow_model* model, const sdflow_generate_options* options, float* out,
                                    size_t capacity) {
  return guarded([&] {
    need(model, "model");
    need(options, "options");
    need(out, "out");
    if (options->n == 0) throw sdflow::ParameterError("n must be positive");
    const auto& vc = model->tok.config();
    const size_t total = options->n * vc.seq_len * vc.features;
    if (capacity < total) {
      throw sdflow::ParameterError("output buffer holds " + std::to_string(capacity) + " values, " +
                                   std::to_string(total) + " needed");
    }
    sdflow::flow::GenerateOptions g;
    g.n = options->n;
    g.seed = options->seed;
    if (options->steps > 0) g.steps = options->steps;
    if (options->tau > 0.0) g.tau = options->tau;
    g.kde_only = options->kde_only != 0;
    const auto res = sdflow::flow::euler_generate(model->flow, model->tok, g);
    std::memcpy(out, res.windows.data(), total * sizeof(float));
  });
}

}  // extern "C"
