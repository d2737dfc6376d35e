// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "sdflow/common/error.hpp"
#include "sdflow/common/log.hpp"
#include "sdflow/common/rng.hpp"

namespace sdflow::data {

std::size_t WindowedDataset::count(Split s) const {
  return static_cast<std::size_t>(std::count(split.begin(), split.end(), s));
}

std::vector<std::size_t> WindowedDataset::indices(Split s) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == s) out.push_back(i);
  }
  return out;
}

WindowedDataset WindowedDataset::subset(std::span<const std::size_t> rows) const {
  WindowedDataset out;
  out.seq_len = seq_len;
  out.features = features;
  out.feature_min = feature_min;
  out.feature_max = feature_max;
  out.source = source;
  out.windows.reserve(rows.size() * window_numel());
  for (std::size_t r : rows) {
    if (r >= size()) throw DataError("window index " + std::to_string(r) + " out of range");
    auto w = window(r);
    out.windows.insert(out.windows.end(), w.begin(), w.end());
    out.split.push_back(split[r]);
  }
  return out;
}

WindowedDataset WindowedDataset::subset(Split s) const {
  const auto rows = indices(s);
  return subset(std::span<const std::size_t>(rows));
}

WindowedDataset gen_sines(const SinesOptions& opts) {
  if (opts.n == 0 || opts.seq_len == 0 || opts.features == 0) {
    throw ParameterError("gen_sines needs n, seq_len, features >= 1");
  }
  WindowedDataset ds;
  ds.seq_len = opts.seq_len;
  ds.features = opts.features;
  ds.windows.resize(opts.n * opts.seq_len * opts.features);
  ds.split.assign(opts.n, Split::kTrain);
  // Stored stats describe the raw sine range mapped onto [0, 1].
  ds.feature_min.assign(opts.features, -1.0);
  ds.feature_max.assign(opts.features, 1.0);
  ds.source = "sines(seed=" + std::to_string(opts.seed) + ")";
  Rng rng(opts.seed);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (std::size_t i = 0; i < opts.n; ++i) {
    float* w = ds.windows.data() + i * ds.window_numel();
    for (std::size_t j = 0; j < opts.features; ++j) {
      double f = rng.uniform(opts.freq_lo, opts.freq_hi);
      double phi = rng.uniform(-std::numbers::pi, std::numbers::pi);
      if (opts.debug_period) {
        f = 1.0 / static_cast<double>(opts.seq_len);
        phi = 0.0;
      }
      for (std::size_t t = 0; t < opts.seq_len; ++t) {
        const double v = std::sin(kTwoPi * f * static_cast<double>(t) + phi);
        w[t * opts.features + j] = static_cast<float>(0.5 * (v + 1.0));
      }
    }
  }
  return ds;
}

std::size_t window_count(std::size_t rows, std::size_t seq_len, std::size_t stride) {
  if (stride == 0 || seq_len == 0) throw ParameterError("seq_len and stride must be positive");
  if (rows < seq_len) return 0;
  return (rows - seq_len) / stride + 1;
}

void split(WindowedDataset& ds, double heldout_fraction, std::uint64_t seed) {
  const std::size_t n = ds.size();
  if (!(heldout_fraction > 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("heldout fraction must lie in (0, 1)");
  }
  const auto held = static_cast<std::size_t>(std::llround(heldout_fraction * static_cast<double>(n)));
  if (held == 0 || held == n) {
    throw ConfigError("split of " + std::to_string(n) + " windows at fraction " + std::to_string(heldout_fraction) +
                      " leaves an empty side");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng.engine());
  ds.split.assign(n, Split::kTrain);
  for (std::size_t i = 0; i < held; ++i) ds.split[order[i]] = Split::kHeldout;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_cell(const std::string& raw, std::size_t row, std::size_t col) {
  const std::string s = trim(raw);
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw DataError("non-numeric cell '" + s + "' at row " + std::to_string(row) + ", column " +
                    std::to_string(col));
  }
  return v;
}

std::vector<std::vector<double>> read_numeric_csv(const std::string& path, std::size_t& columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": missing header row");
  columns = split_fields(line).size();
  std::vector<std::vector<double>> rows;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != columns) {
      throw DataError(path + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " cells, header has " + std::to_string(columns));
    }
    std::vector<double> vals(columns);
    for (std::size_t c = 0; c < columns; ++c) vals[c] = parse_cell(fields[c], row, c + 1);
    rows.push_back(std::move(vals));
  }
  return rows;
}

}  // namespace

WindowedDataset windows_from_series(const std::vector<std::vector<double>>& rows, std::size_t columns,
                                    const CsvOptions& opts, const std::string& source) {
  const std::size_t n = window_count(rows.size(), opts.seq_len, opts.stride);
  if (n == 0) {
    throw DataError(source + ": " + std::to_string(rows.size()) + " rows, fewer than seq_len " +
                    std::to_string(opts.seq_len));
  }
  WindowedDataset ds;
  ds.seq_len = opts.seq_len;
  ds.features = columns;
  ds.source = source;
  ds.split.assign(n, Split::kTrain);
  if (n > 1) split(ds, opts.heldout_fraction, opts.seed);

  // Min-max statistics from train windows only.
  ds.feature_min.assign(columns, std::numeric_limits<double>::infinity());
  ds.feature_max.assign(columns, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.split[i] != Split::kTrain) continue;
    for (std::size_t t = 0; t < opts.seq_len; ++t) {
      const auto& r = rows[i * opts.stride + t];
      for (std::size_t c = 0; c < columns; ++c) {
        ds.feature_min[c] = std::min(ds.feature_min[c], r[c]);
        ds.feature_max[c] = std::max(ds.feature_max[c], r[c]);
      }
    }
  }
  for (std::size_t c = 0; c < columns; ++c) {
    if (ds.feature_max[c] == ds.feature_min[c]) {
      log::warn(source + ": feature " + std::to_string(c) + " has zero range; normalized to 0");
    }
  }
  ds.windows.resize(n * ds.window_numel());
  for (std::size_t i = 0; i < n; ++i) {
    float* w = ds.windows.data() + i * ds.window_numel();
    for (std::size_t t = 0; t < opts.seq_len; ++t) {
      const auto& r = rows[i * opts.stride + t];
      for (std::size_t c = 0; c < columns; ++c) {
        const double range = ds.feature_max[c] - ds.feature_min[c];
        double v = range > 0.0 ? (r[c] - ds.feature_min[c]) / range : 0.0;
        w[t * columns + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return ds;
}

WindowedDataset load_csv_windows(const std::string& path, const CsvOptions& opts) {
  std::size_t columns = 0;
  const auto rows = read_numeric_csv(path, columns);
  return windows_from_series(rows, columns, opts, path);
}

void write_windows_csv(const std::string& path, const WindowedDataset& ds) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "window_id";
  for (std::size_t c = 0; c < ds.features; ++c) out << ",f" << c;
  out << "\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto w = ds.window(i);
    for (std::size_t t = 0; t < ds.seq_len; ++t) {
      out << i;
      for (std::size_t c = 0; c < ds.features; ++c) {
        const auto res = std::to_chars(buf, buf + sizeof(buf), w[t * ds.features + c]);
        out << ',' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
      }
      out << "\n";
    }
  }
  if (!out) throw IoError("write failed: " + path);
}

WindowedDataset read_windows_csv(const std::string& path, std::size_t seq_len) {
  std::size_t columns = 0;
  const auto rows = read_numeric_csv(path, columns);
  if (columns < 2) throw DataError(path + ": expected window_id plus feature columns");
  if (rows.empty() || rows.size() % seq_len != 0) {
    throw DataError(path + ": row count " + std::to_string(rows.size()) + " is not a multiple of seq_len " +
                    std::to_string(seq_len));
  }
  WindowedDataset ds;
  ds.seq_len = seq_len;
  ds.features = columns - 1;
  ds.source = path;
  const std::size_t n = rows.size() / seq_len;
  ds.split.assign(n, Split::kTrain);
  ds.windows.reserve(rows.size() * ds.features);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < seq_len; ++t) {
      const auto& r = rows[i * seq_len + t];
      if (r[0] != rows[i * seq_len][0]) throw DataError(path + ": window " + std::to_string(i) + " is ragged");
      for (std::size_t c = 1; c < columns; ++c) ds.windows.push_back(static_cast<float>(r[c]));
    }
  }
  ds.feature_min.assign(ds.features, 0.0);
  ds.feature_max.assign(ds.features, 1.0);
  return ds;
}

}  // namespace sdflow::data
