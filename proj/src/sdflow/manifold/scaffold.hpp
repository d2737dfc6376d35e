// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "sdflow/autodiff/ops.hpp"
#include "sdflow/common/rng.hpp"

namespace sdflow::manifold {

inline constexpr double kScaffoldInitStd = 0.01;

// Low-rank factors of the flattened latents: Z ≈ U Vᵀ with U: [M, r], V: [D, r].
struct AnchorScaffold {
  std::size_t M = 0, r = 0, D = 0;
  ad::Tensor<float> U, V;
  double lambda_mu = 0.1;
  double lambda_sigma = 10.0;
};

AnchorScaffold init_scaffold(std::size_t M, std::size_t r, std::size_t D, std::uint64_t seed);

enum class InitNorm {
  kPerRow,  // each of the L positions unit norm
  kGlobal,  // whole L x d_c block rescaled to Frobenius norm sqrt(L)
};

// z0 = normalize(u Vᵀ) reshaped to [L, d_c]. Zero rows get a 1e-8 isotropic
// perturbation before normalization.
std::vector<float> anchor_init(std::span<const float> u, const ad::Tensor<float>& V, std::size_t L, std::size_t dc,
                               InitNorm norm, Rng& fallback);

// Differentiable batch version: coords [B, r] -> [B, L, d_c].
ad::Tensor<float> anchor_init(ad::Tape<float>& tape, const ad::Tensor<float>& coords, const ad::Tensor<float>& V,
                              std::size_t L, std::size_t dc, InitNorm norm);

// λ_μ ||ū||² + λ_σ |std(U) - 1| with a global scalar std.
template <typename T>
ad::Tensor<T> coord_reg_loss(ad::Tape<T>& tape, const ad::Tensor<T>& U, double lambda_mu, double lambda_sigma);

struct CoordStats {
  double mean_norm = 0.0;  // ||ū||
  double global_std = 0.0;
};
CoordStats coord_stats(std::span<const float> U, std::size_t M, std::size_t r);

// Mean over rows of the distance to the nearest other row. M >= 2.
double mean_nn_distance(std::span<const double> U, std::size_t M, std::size_t r);
// Distance from each query row to its nearest reference row.
std::vector<double> nn_distances(std::span<const double> queries, std::span<const double> refs, std::size_t dim,
                                 bool exclude_self = false);

// Equal-weight Gaussian mixture over anchor coordinates with h = alpha * d̄_NN.
class AnchorPrior {
 public:
  AnchorPrior() = default;
  AnchorPrior(std::vector<double> coords, std::size_t M, std::size_t r, double alpha);
  static AnchorPrior from_scaffold(const AnchorScaffold& s, double alpha);
  // Fixed bandwidth, bypassing the nearest-neighbor calibration.
  static AnchorPrior with_bandwidth(std::vector<double> coords, std::size_t M, std::size_t r, double h);

  std::size_t M() const { return M_; }
  std::size_t r() const { return r_; }
  double alpha() const { return alpha_; }
  double mean_nn() const { return mean_nn_; }
  double h() const { return h_; }
  const std::vector<double>& coords() const { return coords_; }

  void set_alpha(double alpha);
  std::vector<double> sample(Rng& rng) const;
  std::vector<double> sample(Rng& rng, std::size_t* center) const;
  double density(std::span<const double> u) const;

 private:
  std::vector<double> coords_;
  std::size_t M_ = 0, r_ = 0;
  double alpha_ = 0.0, mean_nn_ = 0.0, h_ = 0.0;
};

}  // namespace sdflow::manifold
