// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sdflow::data {

enum class Split : std::uint8_t { kTrain = 0, kHeldout = 1 };

// n windows of shape [seq_len, features], row-major, values in [0, 1].
struct WindowedDataset {
  std::size_t seq_len = 0;
  std::size_t features = 0;
  std::vector<float> windows;
  std::vector<double> feature_min, feature_max;
  std::vector<Split> split;
  std::string source;

  std::size_t size() const { return split.size(); }
  std::size_t window_numel() const { return seq_len * features; }
  std::span<const float> window(std::size_t i) const {
    return {windows.data() + i * window_numel(), window_numel()};
  }
  std::size_t count(Split s) const;
  std::vector<std::size_t> indices(Split s) const;
  // Dataset holding only the windows with the given tag (stats carried over).
  WindowedDataset subset(Split s) const;
  WindowedDataset subset(std::span<const std::size_t> rows) const;
};

struct SinesOptions {
  std::size_t n = 1;
  std::size_t seq_len = 24;
  std::size_t features = 5;
  std::uint64_t seed = 0;
  double freq_lo = 0.01;
  double freq_hi = 0.15;
  // One full period per window with zero phase; for periodicity checks.
  bool debug_period = false;
};

WindowedDataset gen_sines(const SinesOptions& opts);

struct CsvOptions {
  std::size_t seq_len = 24;
  std::size_t stride = 1;
  double heldout_fraction = 0.2;
  std::uint64_t seed = 0;
};

// Header row, numeric cells, one row per timestep.
WindowedDataset load_csv_windows(const std::string& path, const CsvOptions& opts);
WindowedDataset windows_from_series(const std::vector<std::vector<double>>& rows, std::size_t columns,
                                    const CsvOptions& opts, const std::string& source);

std::size_t window_count(std::size_t rows, std::size_t seq_len, std::size_t stride);

// Retags windows: round(fraction * n) held out, chosen uniformly by seed.
void split(WindowedDataset& ds, double heldout_fraction, std::uint64_t seed);

// Writes windows as CSV: window_id, then one column per feature.
void write_windows_csv(const std::string& path, const WindowedDataset& ds);
// Reads the format written by write_windows_csv.
WindowedDataset read_windows_csv(const std::string& path, std::size_t seq_len);

}  // namespace sdflow::data
