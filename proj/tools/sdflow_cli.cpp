// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end over the C API.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sdflow/sdflow.h"

namespace {

constexpr int kChecksFailed = 10;

struct Globals {
  std::string config_file;
  std::optional<unsigned long long> seed;
  std::string out;
  std::optional<int> threads;
  std::vector<std::string> sets;
  std::string log_level = "info";
};

const char* opt(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

int fail(sdflow_status st) {
  std::fprintf(stderr, "sdflow: %s error: %s\n", sdflow_status_name(st), sdflow_last_error());
  return static_cast<int>(st);
}

int threads_from_env() {
  if (const char* env = std::getenv("SDFLOW_THREADS")) {
    try {
      return std::max(1, std::stoi(env));
    } catch (const std::exception&) {
      std::fprintf(stderr, "sdflow: ignoring SDFLOW_THREADS=%s\n", env);
    }
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent flow matching for time series on a learned anchor manifold"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "Config file of key=value lines")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Run seed (overrides the seed key)");
  app.add_option("--out", g.out, "Output directory")->required();
  app.add_option("--threads", g.threads, "Worker threads (default: SDFLOW_THREADS or all cores)")
      ->check(CLI::PositiveNumber)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.add_option("--set", g.sets, "Override a config key, as key=value (repeatable)");
  app.add_option("--log-level", g.log_level, "debug, info, warn, error or off")
      ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

  // Subcommand flags that map onto config keys.
  std::map<std::string, std::string> key_flags;
  auto key_option = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&key_flags, key](const std::string& v) { key_flags[key] = v; },
                                          help);
  };

  std::string stage1, stage2, baseline, tokenizer, synthetic, real, train, history, which, axis;

  auto* vq = app.add_subcommand("train-vqvae", "Train the Stage-1 tokenizer");

  auto* tf = app.add_subcommand("train-flow", "Train the Stage-2 scaffold and flow on a frozen tokenizer");
  tf->add_option("--stage1", stage1, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("generate", "Sample windows from a Stage-2 checkpoint");
  gen->add_option("--stage2", stage2, "Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  key_option(gen, "--n", "gen.n", "Number of windows");
  key_option(gen, "--steps", "gen.steps", "Euler steps S");
  key_option(gen, "--tau", "gen.tau", "Inference temperature");
  key_option(gen, "--mode", "gen.mode", "flow or kde_only");

  auto* ev = app.add_subcommand("evaluate", "Score synthetic windows");
  ev->add_option("--tokenizer", tokenizer, "Stage-1 or Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  ev->add_option("--synthetic", synthetic, "Synthetic windows CSV")->required()->check(CLI::ExistingFile);
  ev->add_option("--real", real, "Held-out windows CSV (default: configured dataset)")->check(CLI::ExistingFile);
  ev->add_option("--train", train, "Training windows CSV (default: configured dataset)")->check(CLI::ExistingFile);

  auto* an = app.add_subcommand("analyze", "Geometry experiments");
  an->add_option("which", which, "spectrum, transport, pinsker or kde-rate")
      ->required()
      ->check(CLI::IsMember({"spectrum", "transport", "pinsker", "kde-rate"}));
  an->add_option("--stage2", stage2, "Stage-2 checkpoint (spectrum)")->check(CLI::ExistingFile);
  an->add_option("--baseline", baseline, "Gaussian-prior Stage-2 checkpoint (spectrum)")->check(CLI::ExistingFile);

  auto* fc = app.add_subcommand("forecast", "Complete the second half of history windows");
  fc->add_option("--stage2", stage2, "Stage-2 checkpoint")->required()->check(CLI::ExistingFile);
  fc->add_option("--history", history, "History windows CSV (first half of each window)")
      ->required()
      ->check(CLI::ExistingFile);
  key_option(fc, "--steps", "gen.steps", "Euler steps S");
  key_option(fc, "--tau", "gen.tau", "Inference temperature");

  auto* ab = app.add_subcommand("ablate", "Multi-seed ablation along one axis");
  ab->add_option("axis", axis, "prior, rank, bandwidth, steps or heldout-fraction")
      ->required()
      ->check(CLI::IsMember({"prior", "rank", "bandwidth", "steps", "heldout-fraction"}));
  ab->add_option("--stage1", stage1, "Stage-1 checkpoint (default: train one)")->check(CLI::ExistingFile);
  key_option(ab, "--values", "ablate.values", "Comma-separated settings");
  key_option(ab, "--seeds", "ablate.seeds", "Number of seeds");

  CLI11_PARSE(app, argc, argv);

  const std::map<std::string, sdflow_log_level> levels{{"debug", SDFLOW_LOG_DEBUG},
                                                       {"info", SDFLOW_LOG_INFO},
                                                       {"warn", SDFLOW_LOG_WARN},
                                                       {"error", SDFLOW_LOG_ERROR},
                                                       {"off", SDFLOW_LOG_OFF}};
  sdflow_set_log_level(levels.at(g.log_level));
  sdflow_set_threads(g.threads.value_or(threads_from_env()));

  // Precedence: flags over the config file over built-in defaults.
  sdflow_config* cfg = nullptr;
  sdflow_status st = sdflow_config_new(&cfg);
  if (st != SDFLOW_OK) return fail(st);
  auto apply = [&]() -> sdflow_status {
    if (!g.config_file.empty()) {
      if (auto s = sdflow_config_load_file(cfg, g.config_file.c_str()); s != SDFLOW_OK) return s;
    }
    for (const auto& kv : g.sets) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos || eq == 0) {
        std::fprintf(stderr, "sdflow: --set expects key=value, got '%s'\n", kv.c_str());
        return SDFLOW_E_CONFIG;
      }
      if (auto s = sdflow_config_set(cfg, kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()); s != SDFLOW_OK) {
        return s;
      }
    }
    for (const auto& [k, v] : key_flags) {
      if (auto s = sdflow_config_set(cfg, k.c_str(), v.c_str()); s != SDFLOW_OK) return s;
    }
    if (g.seed) return sdflow_config_set(cfg, "seed", std::to_string(*g.seed).c_str());
    return SDFLOW_OK;
  };
  st = apply();
  if (st != SDFLOW_OK) {
    sdflow_config_free(cfg);
    return fail(st);
  }

  sdflow_result result{};
  const char* out = g.out.c_str();
  if (vq->parsed()) {
    st = sdflow_train_vqvae(cfg, out, &result);
  } else if (tf->parsed()) {
    st = sdflow_train_flow(cfg, stage1.c_str(), out, &result);
  } else if (gen->parsed()) {
    st = sdflow_generate(cfg, stage2.c_str(), out, &result);
  } else if (ev->parsed()) {
    st = sdflow_evaluate(cfg, tokenizer.c_str(), synthetic.c_str(), opt(real), opt(train), out, &result);
  } else if (an->parsed()) {
    st = sdflow_analyze(cfg, which.c_str(), opt(stage2), opt(baseline), out, &result);
  } else if (fc->parsed()) {
    st = sdflow_forecast(cfg, stage2.c_str(), history.c_str(), out, &result);
  } else if (ab->parsed()) {
    st = sdflow_ablate(cfg, axis.c_str(), opt(stage1), out, &result);
  }
  sdflow_config_free(cfg);
  if (st != SDFLOW_OK) return fail(st);
  std::printf("%d/%d checks passed\n", result.checks - result.failed, result.checks);
  return result.failed == 0 ? 0 : kChecksFailed;
}
