// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/vq/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sdflow/common/error.hpp"
#include "sdflow/common/log.hpp"

namespace sdflow::vq {

Codebook::Codebook(std::size_t k, std::size_t d)
    : size(k), dim(d), codes(k * d, 0.0f), ema_cluster_size(k, 0.0), ema_embed_sum(k * d, 0.0), usage(k, 0) {}

Codebook Codebook::random(std::size_t k, std::size_t d, Rng& rng) {
  if (k == 0 || d == 0) throw ConfigError("codebook needs K, d_c >= 1");
  Codebook cb(k, d);
  for (auto& v : cb.codes) v = static_cast<float>(rng.normal());
  normalize_rows(cb.codes, d);
  for (std::size_t i = 0; i < k * d; ++i) cb.ema_embed_sum[i] = cb.codes[i];
  std::fill(cb.ema_cluster_size.begin(), cb.ema_cluster_size.end(), 1.0);
  return cb;
}

std::size_t Codebook::utilization_count() const {
  std::size_t n = 0;
  for (auto u : usage) n += u > 0;
  return n;
}

void normalize_rows(std::span<float> rows, std::size_t dim) {
  for (std::size_t r = 0; r < rows.size() / dim; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += static_cast<double>(rows[r * dim + j]) * rows[r * dim + j];
    const double norm = std::sqrt(s);
    if (norm == 0.0) continue;
    for (std::size_t j = 0; j < dim; ++j) rows[r * dim + j] = static_cast<float>(rows[r * dim + j] / norm);
  }
}

std::size_t quantize(std::span<const float> h, const Codebook& cb) {
  if (cb.size == 0) throw ConfigError("quantize on an empty codebook");
  if (h.size() != cb.dim) throw DimensionError("latent width does not match code_dim");
  std::size_t best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < cb.size; ++k) {
    const float* c = cb.codes.data() + k * cb.dim;
    double s = 0.0;
    for (std::size_t j = 0; j < cb.dim; ++j) s += static_cast<double>(h[j]) * c[j];
    if (s > best_sim) {
      best_sim = s;
      best = k;
    }
  }
  return best;
}

std::vector<int> quantize_rows(std::span<const float> rows, const Codebook& cb) {
  if (cb.dim == 0 || rows.size() % cb.dim != 0) throw DimensionError("latent rows do not match code_dim");
  std::vector<int> out(rows.size() / cb.dim);
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = static_cast<int>(quantize(rows.subspan(r * cb.dim, cb.dim), cb));
  }
  return out;
}

std::vector<float> dequantize(std::span<const int> indices, const Codebook& cb) {
  std::vector<float> out;
  out.reserve(indices.size() * cb.dim);
  for (int y : indices) {
    if (y < 0 || static_cast<std::size_t>(y) >= cb.size) {
      throw DataError("token " + std::to_string(y) + " outside codebook of size " + std::to_string(cb.size));
    }
    auto c = cb.code(static_cast<std::size_t>(y));
    out.insert(out.end(), c.begin(), c.end());
  }
  return out;
}

void ema_update(Codebook& cb, std::span<const float> latents, std::span<const int> indices, double decay,
                double eps) {
  if (latents.size() != indices.size() * cb.dim) throw DimensionError("ema_update: latents/indices mismatch");
  std::vector<double> counts(cb.size, 0.0), sums(cb.size * cb.dim, 0.0);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto k = static_cast<std::size_t>(indices[i]);
    if (k >= cb.size) throw DataError("ema_update: index out of range");
    counts[k] += 1.0;
    for (std::size_t j = 0; j < cb.dim; ++j) sums[k * cb.dim + j] += latents[i * cb.dim + j];
    ++cb.usage[k];
  }
  for (std::size_t k = 0; k < cb.size; ++k) {
    cb.ema_cluster_size[k] = decay * cb.ema_cluster_size[k] + (1.0 - decay) * counts[k];
    double norm2 = 0.0;
    for (std::size_t j = 0; j < cb.dim; ++j) {
      auto& e = cb.ema_embed_sum[k * cb.dim + j];
      e = decay * e + (1.0 - decay) * sums[k * cb.dim + j];
      const double m = e / (cb.ema_cluster_size[k] + eps);
      norm2 += m * m;
    }
    // A code with no mass keeps its direction.
    if (!(norm2 > 0.0)) continue;
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t j = 0; j < cb.dim; ++j) {
      cb.codes[k * cb.dim + j] =
          static_cast<float>(cb.ema_embed_sum[k * cb.dim + j] / (cb.ema_cluster_size[k] + eps) * inv);
    }
  }
}

std::size_t reset_inactive_codes(Codebook& cb, std::span<const float> donors, std::int64_t threshold, Rng& rng) {
  const std::size_t n_donors = cb.dim ? donors.size() / cb.dim : 0;
  std::size_t replaced = 0;
  if (n_donors == 0) {
    log::warn("reset_inactive_codes: no donor latents, skipping");
  } else {
    for (std::size_t k = 0; k < cb.size; ++k) {
      if (cb.usage[k] > threshold) continue;
      const std::size_t d = rng.index(n_donors);
      std::span<float> row(cb.codes.data() + k * cb.dim, cb.dim);
      std::copy_n(donors.data() + d * cb.dim, cb.dim, row.begin());
      normalize_rows(row, cb.dim);
      for (std::size_t j = 0; j < cb.dim; ++j) cb.ema_embed_sum[k * cb.dim + j] = row[j];
      cb.ema_cluster_size[k] = 1.0;
      ++replaced;
    }
  }
  std::fill(cb.usage.begin(), cb.usage.end(), 0);
  return replaced;
}

}  // namespace sdflow::vq
