// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sdflow/data/config.hpp"
#include "sdflow/data/dataset.hpp"
#include "sdflow/eval/metrics.hpp"
#include "sdflow/flow/flow.hpp"
#include "sdflow/vq/tokenizer.hpp"

// Experiment lifecycle shared by the CLI, the C API and the acceptance suite.
namespace sdflow::pipeline {

// Built-in defaults for every key the commands read (desk-scale Sines).
data::KeyValueConfig default_config();

// CRC32 of the serialized config, as 8 hex digits.
std::string config_hash(const data::KeyValueConfig& cfg);

struct Run {
  std::string command;
  data::KeyValueConfig config;  // fully resolved
  std::filesystem::path out;
  std::uint64_t seed = 0;
};

// Creates the output directory and writes manifest.txt (command, seed, code
// version, config hash, start time, resolved config) before any work.
Run start_run(const std::string& command, const data::KeyValueConfig& resolved, const std::filesystem::path& out);

struct CheckList {
  std::vector<std::pair<std::string, bool>> items;
  void add(const std::string& name, bool ok) { items.emplace_back(name, ok); }
  bool all_pass() const;
  std::size_t failures() const;
};

struct CommandResult {
  CheckList checks;
  std::vector<std::filesystem::path> outputs;
};

// Writes outputs.txt (file name and CRC32 of each output) and the check list.
void finish_run(const Run& run, CommandResult& result);

// ---- config views -----------------------------------------------------------
data::WindowedDataset load_dataset(const data::KeyValueConfig& cfg);
vq::VqTrainOptions vq_train_options(const data::KeyValueConfig& cfg);
flow::FlowTrainOptions flow_train_options(const data::KeyValueConfig& cfg);
eval::ConvNetOptions conv_options(const data::KeyValueConfig& cfg);

// ---- Stage-2 building blocks ------------------------------------------------
// Training rows used when only `fraction` of the anchors is kept. Fraction 1
// keeps every row in its original order; otherwise a seeded subset of
// round(fraction * n) rows, which must be at least 32.
data::WindowedDataset anchor_subset(const data::WindowedDataset& train, double fraction, std::uint64_t seed);

// Trains Stage 2 on an anchor subset. Epochs are scaled by 1 / fraction so
// every fraction takes the same number of optimizer steps.
flow::FlowModel train_stage2(const vq::Tokenizer& tok, const data::WindowedDataset& train,
                             const flow::FlowConfig& config, flow::FlowTrainOptions opts, double fraction = 1.0);

// Sampling seed paired with a Stage-2 training seed in ablations.
std::uint64_t generation_seed(std::uint64_t run_seed);

struct Score {
  double ds = 0.0;
  double lfd = 0.0;
};
Score score(const vq::Tokenizer& tok, const data::WindowedDataset& real, std::span<const float> synthetic,
            std::size_t n, std::uint64_t seed, const eval::ConvNetOptions& conv);

// ---- ablations --------------------------------------------------------------
struct AblationCell {
  std::string setting;
  std::uint64_t seed = 0;
  Score score;
};

struct AblationTable {
  std::string axis;
  std::vector<std::string> settings;
  std::vector<AblationCell> cells;

  std::vector<double> ds_of(const std::string& setting) const;  // ordered by seed
  // setting, seeds, ds_mean, ds_std, lfd_mean, lfd_std
  std::string summary_csv() const;
  // setting, seed, ds, lfd
  std::string cells_csv() const;
};

inline constexpr const char* kAblationAxes[] = {"prior", "rank", "bandwidth", "steps", "heldout-fraction"};

// Settings for `axis` from ablate.values, or the axis default. The prior axis
// always reports anchored, gaussian and kde_only (anchored model, no ODE).
std::vector<std::string> ablation_settings(const data::KeyValueConfig& cfg, const std::string& axis);

// Stage 2 for each seed in ablate.seeds (seed, seed + 1, ...), generation of
// ablate.n windows, DS and LFD against the held-out split.
AblationTable run_ablation(const vq::Tokenizer& tok, const data::WindowedDataset& dataset,
                           const data::KeyValueConfig& cfg, const std::string& axis);

// ---- commands ---------------------------------------------------------------
CommandResult cmd_train_vqvae(const Run& run);
CommandResult cmd_train_flow(const Run& run, const std::string& stage1_path);
CommandResult cmd_generate(const Run& run, const std::string& stage2_path);
// `real_csv` / `train_csv` default to the configured dataset's held-out and
// train splits when empty.
CommandResult cmd_evaluate(const Run& run, const std::string& tokenizer_path, const std::string& synthetic_csv,
                           const std::string& real_csv, const std::string& train_csv);
// which: spectrum, transport, pinsker, kde-rate. Spectrum needs the anchored
// Stage-2 checkpoint and optionally a Gaussian-prior baseline.
CommandResult cmd_analyze(const Run& run, const std::string& which, const std::string& stage2_path,
                          const std::string& baseline_path);
CommandResult cmd_forecast(const Run& run, const std::string& stage2_path, const std::string& history_csv);
// Trains a tokenizer unless `stage1_path` is given.
CommandResult cmd_ablate(const Run& run, const std::string& axis, const std::string& stage1_path);

}  // namespace sdflow::pipeline
