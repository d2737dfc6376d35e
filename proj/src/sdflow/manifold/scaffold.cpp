// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/manifold/scaffold.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "sdflow/common/error.hpp"

namespace sdflow::manifold {

AnchorScaffold init_scaffold(std::size_t M, std::size_t r, std::size_t D, std::uint64_t seed) {
  if (M == 0 || D == 0 || r == 0 || r > std::min(M, D)) {
    throw ConfigError("rank " + std::to_string(r) + " outside [1, min(M=" + std::to_string(M) +
                      ", D=" + std::to_string(D) + ")]");
  }
  AnchorScaffold s;
  s.M = M;
  s.r = r;
  s.D = D;
  Rng rng(seed);
  s.U = ad::Tensor<float>({M, r}, true);
  s.V = ad::Tensor<float>({D, r}, true);
  for (auto& v : s.U.data()) v = static_cast<float>(rng.normal(0.0, kScaffoldInitStd));
  for (auto& v : s.V.data()) v = static_cast<float>(rng.normal(0.0, kScaffoldInitStd));
  return s;
}

std::vector<float> anchor_init(std::span<const float> u, const ad::Tensor<float>& V, std::size_t L, std::size_t dc,
                               InitNorm norm, Rng& fallback) {
  const std::size_t D = V.size(0), r = V.size(1);
  if (u.size() != r || D != L * dc) throw DimensionError("anchor_init: u/V/L/d_c shapes inconsistent");
  std::vector<double> z(D, 0.0);
  const float* v = V.ptr();
  for (std::size_t i = 0; i < D; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < r; ++k) s += static_cast<double>(u[k]) * v[i * r + k];
    z[i] = s;
  }
  auto fix_zero = [&](std::size_t start, std::size_t len) {
    double n2 = 0.0;
    for (std::size_t j = 0; j < len; ++j) n2 += z[start + j] * z[start + j];
    if (n2 > 0.0) return;
    for (std::size_t j = 0; j < len; ++j) z[start + j] += 1e-8 * fallback.normal();
  };
  std::vector<float> out(D);
  if (norm == InitNorm::kPerRow) {
    for (std::size_t p = 0; p < L; ++p) {
      fix_zero(p * dc, dc);
      double n2 = 0.0;
      for (std::size_t j = 0; j < dc; ++j) n2 += z[p * dc + j] * z[p * dc + j];
      const double inv = 1.0 / std::sqrt(n2);
      for (std::size_t j = 0; j < dc; ++j) out[p * dc + j] = static_cast<float>(z[p * dc + j] * inv);
    }
  } else {
    fix_zero(0, D);
    double n2 = 0.0;
    for (double x : z) n2 += x * x;
    const double s = std::sqrt(static_cast<double>(L) / n2);
    for (std::size_t i = 0; i < D; ++i) out[i] = static_cast<float>(z[i] * s);
  }
  return out;
}

ad::Tensor<float> anchor_init(ad::Tape<float>& tape, const ad::Tensor<float>& coords, const ad::Tensor<float>& V,
                              std::size_t L, std::size_t dc, InitNorm norm) {
  if (coords.rank() != 2 || V.size(0) != L * dc) throw DimensionError("anchor_init: shapes inconsistent");
  const std::size_t B = coords.size(0);
  auto z = ad::reshape(tape, ad::matmul_nt(tape, coords, V), {B, L, dc});
  if (norm == InitNorm::kPerRow) return ad::l2_normalize(tape, z, dc);
  return ad::scale(tape, ad::l2_normalize(tape, z, L * dc), static_cast<float>(std::sqrt(static_cast<double>(L))));
}

template <typename T>
ad::Tensor<T> coord_reg_loss(ad::Tape<T>& tape, const ad::Tensor<T>& U, double lambda_mu, double lambda_sigma) {
  if (U.rank() != 2 || U.size(0) < 2) throw ConfigError("coord_reg_loss needs U with at least 2 rows");
  auto mu = ad::scale(tape, ad::sum_sq(tape, ad::mean_rows(tape, U)), static_cast<T>(lambda_mu));
  auto sd = ad::abs(tape, ad::add_scalar(tape, ad::global_std(tape, U), T(-1)));
  return ad::add(tape, mu, ad::scale(tape, sd, static_cast<T>(lambda_sigma)));
}

template ad::Tensor<float> coord_reg_loss(ad::Tape<float>&, const ad::Tensor<float>&, double, double);
template ad::Tensor<double> coord_reg_loss(ad::Tape<double>&, const ad::Tensor<double>&, double, double);

CoordStats coord_stats(std::span<const float> U, std::size_t M, std::size_t r) {
  std::vector<double> mean(r, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < M; ++i) {
    for (std::size_t k = 0; k < r; ++k) {
      mean[k] += U[i * r + k];
      total += U[i * r + k];
    }
  }
  double n2 = 0.0;
  for (auto& m : mean) {
    m /= static_cast<double>(M);
    n2 += m * m;
  }
  const double gm = total / static_cast<double>(M * r);
  double var = 0.0;
  for (std::size_t i = 0; i < M * r; ++i) var += (U[i] - gm) * (U[i] - gm);
  return {std::sqrt(n2), std::sqrt(var / static_cast<double>(M * r))};
}

std::vector<double> nn_distances(std::span<const double> queries, std::span<const double> refs, std::size_t dim,
                                 bool exclude_self) {
  const std::size_t nq = queries.size() / dim, nr = refs.size() / dim;
  std::vector<double> out(nq, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < nq; ++i) {
    const double* a = queries.data() + i * dim;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nr; ++j) {
      if (exclude_self && i == j) continue;
      const double* b = refs.data() + j * dim;
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim && d2 < best; ++k) d2 += (a[k] - b[k]) * (a[k] - b[k]);
      best = std::min(best, d2);
    }
    out[i] = std::sqrt(best);
  }
  return out;
}

double mean_nn_distance(std::span<const double> U, std::size_t M, std::size_t r) {
  if (M < 2) throw ConfigError("mean_nn_distance needs at least 2 points");
  if (U.size() != M * r) throw DimensionError("mean_nn_distance: buffer size mismatch");
  const auto d = nn_distances(U, U, r, /*exclude_self=*/true);
  double s = 0.0;
  for (double x : d) s += x;
  return s / static_cast<double>(M);
}

AnchorPrior::AnchorPrior(std::vector<double> coords, std::size_t M, std::size_t r, double alpha)
    : coords_(std::move(coords)), M_(M), r_(r) {
  if (coords_.size() != M * r || M == 0) throw DimensionError("AnchorPrior: coordinate buffer mismatch");
  mean_nn_ = M >= 2 ? mean_nn_distance(coords_, M, r) : 0.0;
  set_alpha(alpha);
}

AnchorPrior AnchorPrior::from_scaffold(const AnchorScaffold& s, double alpha) {
  return AnchorPrior(std::vector<double>(s.U.data().begin(), s.U.data().end()), s.M, s.r, alpha);
}

AnchorPrior AnchorPrior::with_bandwidth(std::vector<double> coords, std::size_t M, std::size_t r, double h) {
  if (!(h >= 0.0)) throw ParameterError("bandwidth must be non-negative");
  AnchorPrior p;
  p.coords_ = std::move(coords);
  p.M_ = M;
  p.r_ = r;
  if (p.coords_.size() != M * r || M == 0) throw DimensionError("AnchorPrior: coordinate buffer mismatch");
  p.h_ = h;
  return p;
}

void AnchorPrior::set_alpha(double alpha) {
  if (!(alpha >= 0.0)) throw ParameterError("bandwidth factor must be non-negative");
  alpha_ = alpha;
  h_ = alpha_ * mean_nn_;
}

std::vector<double> AnchorPrior::sample(Rng& rng, std::size_t* center) const {
  const std::size_t j = rng.index(M_);
  if (center) *center = j;
  std::vector<double> u(coords_.begin() + j * r_, coords_.begin() + (j + 1) * r_);
  for (auto& x : u) x += h_ * rng.normal();
  return u;
}

std::vector<double> AnchorPrior::sample(Rng& rng) const { return sample(rng, nullptr); }

double AnchorPrior::density(std::span<const double> u) const {
  if (u.size() != r_) throw DimensionError("density: query has wrong dimension");
  if (!(h_ > 0.0)) throw ParameterError("density needs a positive bandwidth");
  const double h2 = h_ * h_;
  const double log_norm = -0.5 * static_cast<double>(r_) * std::log(2.0 * std::numbers::pi * h2);
  double s = 0.0;
  for (std::size_t i = 0; i < M_; ++i) {
    double d2 = 0.0;
    for (std::size_t k = 0; k < r_; ++k) d2 += (u[k] - coords_[i * r_ + k]) * (u[k] - coords_[i * r_ + k]);
    s += std::exp(log_norm - d2 / (2.0 * h2));
  }
  return s / static_cast<double>(M_);
}

}  // namespace sdflow::manifold
