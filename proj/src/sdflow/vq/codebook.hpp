// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sdflow/common/rng.hpp"

namespace sdflow::vq {

inline constexpr double kEmaEps = 1e-5;

// K unit-norm code rows with EMA statistics.
struct Codebook {
  std::size_t size = 0;  // K
  std::size_t dim = 0;   // d_c
  std::vector<float> codes;            // K x d_c
  std::vector<double> ema_cluster_size;  // K
  std::vector<double> ema_embed_sum;     // K x d_c
  std::vector<std::int64_t> usage;       // assignments since the last reset

  Codebook() = default;
  Codebook(std::size_t k, std::size_t d);
  // Random unit rows; EMA state seeded so that codes equal the running mean.
  static Codebook random(std::size_t k, std::size_t d, Rng& rng);

  std::span<const float> code(std::size_t k) const { return {codes.data() + k * dim, dim}; }
  std::size_t utilization_count() const;
};

// argmax_k <h, c_k>, lowest index on ties.
std::size_t quantize(std::span<const float> h, const Codebook& cb);
std::vector<int> quantize_rows(std::span<const float> rows, const Codebook& cb);
std::vector<float> dequantize(std::span<const int> indices, const Codebook& cb);

// In-place unit normalization of each row of width `dim`.
void normalize_rows(std::span<float> rows, std::size_t dim);

// EMA codebook update from one batch of assignments. Also increments usage.
void ema_update(Codebook& cb, std::span<const float> latents, std::span<const int> indices, double decay,
                double eps = kEmaEps);

// Codes whose usage is <= threshold are replaced by random donor rows. Usage is
// cleared afterwards. Returns the number of codes replaced.
std::size_t reset_inactive_codes(Codebook& cb, std::span<const float> donors, std::int64_t threshold, Rng& rng);

}  // namespace sdflow::vq
