// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "sdflow/common/rng.hpp"
#include "sdflow/flow/flow.hpp"

// Double-precision numerical checks of the transport, posterior-mean and
// kernel-density claims behind the anchored flow.
namespace sdflow::geometry {

struct McEstimate {
  double mean = 0.0;
  double std_err = 0.0;
  std::size_t n = 0;
};

// Fills one data sample z of dimension D.
using DataSampler = std::function<void(Rng&, std::span<double>)>;

// E||z - z0||² with z0 ~ N(0, I_D) drawn independently of z.
McEstimate transport_gaussian(std::size_t D, const DataSampler& data, std::size_t n_trials, std::uint64_t seed);

// D x r matrix with orthonormal columns, from the QR of a Gaussian matrix.
Eigen::MatrixXd semi_orthogonal(std::size_t D, std::size_t r, Rng& rng);
double sigma_max(const Eigen::MatrixXd& V);

struct TransportExperiment {
  std::size_t D = 128;
  std::size_t r = 8;
  double epsilon = 0.0;
  double h = 0.1;
  std::size_t n_trials = 100000;
};

struct AnchoredTransport {
  McEstimate estimate;
  double sigma_max = 0.0;
  double bound = 0.0;  // sigma_max² h² + ε²
  double orthonormality_error = 0.0;  // max |VᵀV - I|
};

// z = V u* + e with e uniform on the radius-ε sphere of col(V)⊥; the start is
// V u with u = u* + N(0, h²/r I_r). Estimates E||z - V u||².
AnchoredTransport transport_anchored(const TransportExperiment& ex, std::uint64_t seed);
AnchoredTransport transport_anchored(const Eigen::MatrixXd& V, double epsilon, double h, std::size_t n_trials,
                                     std::uint64_t seed);

struct BoundInstance {
  std::size_t K = 0;
  std::size_t dim = 0;
  double R = 0.0;
  std::vector<double> codebook;  // [K, dim], row norms <= R
  std::vector<double> p, q;      // true and model posteriors
  double t = 0.0;
  std::vector<double> z_t;       // [dim]
};

// Random instance: K in [2, max_K], R in (0, max_R], Dirichlet(1) p and q.
BoundInstance random_bound_instance(Rng& rng, std::size_t max_K = 16, double max_R = 2.0, std::size_t dim = 4);
void validate(const BoundInstance& b);

double kl_divergence(std::span<const double> p, std::span<const double> q);

struct PinskerResult {
  double lhs = 0.0;  // ||mu_q - mu_p||²
  double rhs = 0.0;  // 2 R² KL(p || q), +inf when q misses support of p
  bool holds = false;
};
PinskerResult pinsker_check(const BoundInstance& b);

struct VelocityBoundResult {
  double velocity_mse = 0.0;  // mean of (1-t)^-2 ||mu_q - mu_p||²
  double bound = 0.0;         // mean of (1-t)^-2 2 R² KL(p || q)
  bool holds = false;         // aggregate inequality
  std::size_t violations = 0; // instances failing individually
};
// Velocities are (mu - z_t) / (1 - t); t must satisfy t <= 1 - delta.
VelocityBoundResult velocity_bound_check(std::span<const BoundInstance> instances, double delta = 1e-3);

struct SpectrumReport {
  std::vector<double> singular_values;
  std::vector<double> cumulative_variance;
  std::size_t effective_rank = 0;
  double threshold = 0.9;
};
// Spectrum of the mean-centered [n, D] batch. A constant batch yields all-zero
// singular values, zero cumulative variance and effective rank 0.
SpectrumReport singular_spectrum(std::span<const double> batch, std::size_t n, std::size_t D, double threshold);
std::size_t effective_rank(std::span<const double> cumulative_variance, double threshold);

struct FlowSpectra {
  std::vector<double> times;
  std::vector<SpectrumReport> reports;  // one per time
};
// z_t batches along Euler trajectories of a trained model from its own prior.
FlowSpectra spectrum_along_flow(const flow::FlowModel& model, const vq::Tokenizer& tok, std::size_t n,
                                std::span<const double> times, std::size_t steps, double threshold,
                                std::uint64_t seed);

struct KdeRateOptions {
  std::size_t r = 1;
  std::vector<std::size_t> sample_sizes{100, 200, 500, 1000, 2000, 5000, 10000};
  double bandwidth_scale = 0.9;  // c in h = c N^(-1/(r+4))
  std::size_t grid_points = 0;   // per axis; 0 picks 2048 for r=1, 512 for r=2
};
struct KdeRateResult {
  std::vector<std::size_t> sample_sizes;
  std::vector<double> bandwidths;
  std::vector<double> mise;
  double slope = 0.0;
  double expected_slope = 0.0;  // -4 / (r + 4)
};
// KDE of a fixed two-component Gaussian mixture, MISE by trapezoid quadrature
// over +-6 std of the mixture, least-squares slope of log MISE on log N.
KdeRateResult kde_rate_experiment(const KdeRateOptions& opts, std::uint64_t seed);

double least_squares_slope(std::span<const double> x, std::span<const double> y);

}  // namespace sdflow::geometry
