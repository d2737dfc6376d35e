// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sdflow/vq/tokenizer.hpp"

namespace sdflow::eval {

// n windows of [seq_len, features], row-major.
struct WindowSet {
  std::span<const float> values;
  std::size_t n = 0;
  std::size_t seq_len = 0;
  std::size_t features = 0;

  static WindowSet of(const data::WindowedDataset& ds) { return {ds.windows, ds.size(), ds.seq_len, ds.features}; }
  std::size_t window_numel() const { return seq_len * features; }
};

// Two conv layers and a linear head, shared by the discriminative score
// (average pooling over time) and the predictive score (last position).
struct ConvNetOptions {
  std::size_t hidden = 32;
  std::size_t kernel = 5;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double lr = 1e-3;
};

inline constexpr const char* kClassifierNote =
    "DS classifier: 2-layer 1-D conv + average pooling (recurrent classifier not used)";

struct DsResult {
  double ds = 0.0;
  double accuracy = 0.0;
  std::size_t per_class = 0;  // windows used from each side after rebalancing
};
// |test accuracy - 0.5| of a classifier separating real (label 0) from
// synthetic (label 1) on a balanced 80/20 split. Needs >= 50 windows per side.
DsResult discriminative_score(const WindowSet& real, const WindowSet& synthetic, std::uint64_t seed,
                              const ConvNetOptions& opts = {});

// Train on synthetic windows to predict the last step from the preceding
// ones; mean absolute error on real windows.
double predictive_score(const WindowSet& synthetic_train, const WindowSet& real_test, std::uint64_t seed,
                        const ConvNetOptions& opts = {});

// ||m1 - m2||² + tr(Σ1 + Σ2 - 2 (Σ1 Σ2)^½) between sample sets of dimension dim.
double frechet_distance(std::span<const double> a, std::size_t na, std::span<const double> b, std::size_t nb,
                        std::size_t dim);
// Frechet distance of position-averaged frozen-encoder latents ("LFD").
double latent_frechet_distance(const vq::Tokenizer& tok, const WindowSet& real, const WindowSet& synthetic);

struct DistanceSummary {
  double mean = 0.0;
  double std = 0.0;
};
DistanceSummary summarize(std::span<const double> v);

struct NnAudit {
  double threshold = 0.0;            // 1st percentile of train->train NN distances
  double copy_rate = 0.0;            // generated within the threshold
  double heldout_copy_rate = 0.0;    // held-out real within the threshold
  DistanceSummary train_nn, generated_nn, heldout_nn;
};
// Exact brute-force Euclidean nearest neighbors in raw window space.
NnAudit nn_audit(const WindowSet& train, const WindowSet& generated, const WindowSet& heldout);

// Linear-interpolated percentile, q in [0, 100].
double percentile(std::vector<double> v, double q);

struct MetricReport {
  double ds = 0.0;
  double ps = 0.0;
  double lfd = 0.0;
  double copy_rate = 0.0;
  DistanceSummary nn_generated, nn_heldout;
  std::uint64_t seed = 0;
};

// All four metrics for one synthetic set. `train` feeds the NN audit,
// `real` is the held-out comparison set.
MetricReport evaluate_all(const vq::Tokenizer& tok, const WindowSet& train, const WindowSet& real,
                          const WindowSet& synthetic, std::uint64_t seed, const ConvNetOptions& opts = {});

std::string report_json(const MetricReport& r, const std::string& config_hash);
std::string report_text(const MetricReport& r, const std::string& config_hash);

}  // namespace sdflow::eval
