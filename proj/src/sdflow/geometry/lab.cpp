// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/geometry/lab.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "sdflow/common/error.hpp"
#include "sdflow/common/parallel.hpp"

namespace sdflow::geometry {

namespace {

McEstimate reduce(const std::vector<double>& v) {
  McEstimate e;
  e.n = v.size();
  if (v.empty()) return e;
  e.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - e.mean) * (x - e.mean);
    e.std_err = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return e;
}

double sq_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

std::vector<double> posterior_mean(const BoundInstance& b, std::span<const double> probs) {
  std::vector<double> mu(b.dim, 0.0);
  for (std::size_t k = 0; k < b.K; ++k) {
    for (std::size_t j = 0; j < b.dim; ++j) mu[j] += probs[k] * b.codebook[k * b.dim + j];
  }
  return mu;
}

double normal_pdf(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return std::exp(-0.5 * u * u) / (sd * std::sqrt(2.0 * std::numbers::pi));
}

// Two diagonal Gaussian components in r dimensions.
struct Mixture {
  std::size_t r;
  double weight[2] = {0.45, 0.55};
  double mean[2][2];
  double sd[2][2];

  explicit Mixture(std::size_t dims) : r(dims) {
    const double m[2][2] = {{-1.2, -0.5}, {1.0, 0.8}};
    const double s[2][2] = {{0.5, 0.4}, {0.8, 0.9}};
    std::copy(&m[0][0], &m[0][0] + 4, &mean[0][0]);
    std::copy(&s[0][0], &s[0][0] + 4, &sd[0][0]);
  }
  void sample(Rng& rng, double* out) const {
    const int c = rng.uniform() < weight[0] ? 0 : 1;
    for (std::size_t a = 0; a < r; ++a) out[a] = rng.normal(mean[c][a], sd[c][a]);
  }
  double axis_mean(std::size_t a) const { return weight[0] * mean[0][a] + weight[1] * mean[1][a]; }
  double axis_std(std::size_t a) const {
    const double m = axis_mean(a);
    double second = 0.0;
    for (int c = 0; c < 2; ++c) second += weight[c] * (sd[c][a] * sd[c][a] + mean[c][a] * mean[c][a]);
    return std::sqrt(second - m * m);
  }
};

std::vector<double> trapezoid_weights(std::size_t G, double step) {
  std::vector<double> w(G, step);
  w.front() = w.back() = 0.5 * step;
  return w;
}

double mise_1d(const Mixture& mix, const std::vector<double>& x, double h, std::size_t G) {
  const double lo = mix.axis_mean(0) - 6.0 * mix.axis_std(0), hi = mix.axis_mean(0) + 6.0 * mix.axis_std(0);
  const double step = (hi - lo) / static_cast<double>(G - 1);
  const auto w = trapezoid_weights(G, step);
  const double N = static_cast<double>(x.size());
  double total = 0.0;
  for (std::size_t g = 0; g < G; ++g) {
    const double pt = lo + step * static_cast<double>(g);
    double est = 0.0;
    for (double xi : x) est += normal_pdf(pt, xi, h);
    est /= N;
    double truth = 0.0;
    for (int c = 0; c < 2; ++c) truth += mix.weight[c] * normal_pdf(pt, mix.mean[c][0], mix.sd[c][0]);
    total += w[g] * (est - truth) * (est - truth);
  }
  return total;
}

// Product kernel: the estimate on the grid is A Bᵀ / N with per-axis kernel
// matrices A, B of shape [G, N].
double mise_2d(const Mixture& mix, const std::vector<double>& x, double h, std::size_t G) {
  const std::size_t N = x.size() / 2;
  double lo[2], step[2];
  for (std::size_t a = 0; a < 2; ++a) {
    lo[a] = mix.axis_mean(a) - 6.0 * mix.axis_std(a);
    step[a] = 12.0 * mix.axis_std(a) / static_cast<double>(G - 1);
  }
  Eigen::MatrixXd A(G, N), B(G, N);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t g = 0; g < G; ++g) {
      A(g, i) = normal_pdf(lo[0] + step[0] * static_cast<double>(g), x[2 * i], h);
      B(g, i) = normal_pdf(lo[1] + step[1] * static_cast<double>(g), x[2 * i + 1], h);
    }
  }
  const Eigen::MatrixXd est = (A * B.transpose()) / static_cast<double>(N);
  const auto wx = trapezoid_weights(G, step[0]), wy = trapezoid_weights(G, step[1]);
  double total = 0.0;
  for (std::size_t gx = 0; gx < G; ++gx) {
    const double px = lo[0] + step[0] * static_cast<double>(gx);
    const double fx[2] = {normal_pdf(px, mix.mean[0][0], mix.sd[0][0]), normal_pdf(px, mix.mean[1][0], mix.sd[1][0])};
    for (std::size_t gy = 0; gy < G; ++gy) {
      const double py = lo[1] + step[1] * static_cast<double>(gy);
      const double truth = mix.weight[0] * fx[0] * normal_pdf(py, mix.mean[0][1], mix.sd[0][1]) +
                           mix.weight[1] * fx[1] * normal_pdf(py, mix.mean[1][1], mix.sd[1][1]);
      const double d = est(gx, gy) - truth;
      total += wx[gx] * wy[gy] * d * d;
    }
  }
  return total;
}

}  // namespace

McEstimate transport_gaussian(std::size_t D, const DataSampler& data, std::size_t n_trials, std::uint64_t seed) {
  if (D == 0 || n_trials == 0) throw ParameterError("transport_gaussian needs D > 0 and n_trials > 0");
  std::vector<double> v(n_trials);
  const Rng root(seed);
  parallel_for(n_trials, [&](std::size_t i) {
    Rng data_rng = root.derive(2 * i), noise_rng = root.derive(2 * i + 1);
    std::vector<double> z(D);
    data(data_rng, z);
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      const double d = z[j] - noise_rng.normal();
      s += d * d;
    }
    v[i] = s;
  });
  return reduce(v);
}

Eigen::MatrixXd semi_orthogonal(std::size_t D, std::size_t r, Rng& rng) {
  if (r == 0 || r > D) throw ParameterError("semi_orthogonal needs 0 < r <= D");
  Eigen::MatrixXd G(D, r);
  for (std::size_t i = 0; i < D; ++i) {
    for (std::size_t j = 0; j < r; ++j) G(i, j) = rng.normal();
  }
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  return qr.householderQ() * Eigen::MatrixXd::Identity(D, r);
}

double sigma_max(const Eigen::MatrixXd& V) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(V.transpose() * V, Eigen::EigenvaluesOnly);
  return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

AnchoredTransport transport_anchored(const TransportExperiment& ex, std::uint64_t seed) {
  Rng basis = Rng(seed).derive(0xBA515);
  return transport_anchored(semi_orthogonal(ex.D, ex.r, basis), ex.epsilon, ex.h, ex.n_trials, seed);
}

AnchoredTransport transport_anchored(const Eigen::MatrixXd& V, double epsilon, double h, std::size_t n_trials,
                                     std::uint64_t seed) {
  const std::size_t D = static_cast<std::size_t>(V.rows()), r = static_cast<std::size_t>(V.cols());
  if (r == 0 || r >= D) throw ParameterError("transport_anchored needs 0 < r < D");
  if (!(epsilon >= 0.0) || !(h >= 0.0) || n_trials == 0) throw ParameterError("transport_anchored: bad epsilon, h or n");
  AnchoredTransport out;
  out.orthonormality_error = (V.transpose() * V - Eigen::MatrixXd::Identity(r, r)).cwiseAbs().maxCoeff();
  out.sigma_max = sigma_max(V);
  out.bound = out.sigma_max * out.sigma_max * h * h + epsilon * epsilon;

  const double coord_sd = h / std::sqrt(static_cast<double>(r));
  std::vector<double> v(n_trials);
  const Rng root(seed);
  parallel_for(n_trials, [&](std::size_t i) {
    Rng rng = root.derive(i);
    Eigen::VectorXd u_star(r), u(r), e = Eigen::VectorXd::Zero(D);
    for (std::size_t j = 0; j < r; ++j) u_star(j) = rng.normal();
    for (std::size_t j = 0; j < r; ++j) u(j) = u_star(j) + coord_sd * rng.normal();
    if (epsilon > 0.0) {
      Eigen::VectorXd g(D);
      for (std::size_t j = 0; j < D; ++j) g(j) = rng.normal();
      e = g - V * (V.transpose() * g);
      e *= epsilon / e.norm();
    }
    const Eigen::VectorXd z = V * u_star + e;
    v[i] = (z - V * u).squaredNorm();
  });
  out.estimate = reduce(v);
  return out;
}

BoundInstance random_bound_instance(Rng& rng, std::size_t max_K, double max_R, std::size_t dim) {
  if (max_K < 2 || !(max_R > 0.0) || dim == 0) throw ParameterError("random_bound_instance: bad limits");
  BoundInstance b;
  b.K = 2 + rng.index(max_K - 1);
  b.dim = dim;
  b.R = max_R * (1.0 - rng.uniform());
  b.codebook.resize(b.K * dim);
  for (std::size_t k = 0; k < b.K; ++k) {
    std::vector<double> g(dim);
    for (double& x : g) x = rng.normal();
    const double scale = b.R * rng.uniform() / std::sqrt(std::max(sq_norm(g), 1e-300));
    for (std::size_t j = 0; j < dim; ++j) b.codebook[k * dim + j] = g[j] * scale;
  }
  auto dirichlet = [&] {
    std::vector<double> p(b.K);
    for (double& x : p) x = rng.gamma(1.0);
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    for (double& x : p) x /= s;
    return p;
  };
  b.p = dirichlet();
  b.q = dirichlet();
  b.t = rng.uniform(0.0, 0.999);
  b.z_t.resize(dim);
  for (double& x : b.z_t) x = rng.normal();
  return b;
}

void validate(const BoundInstance& b) {
  if (b.K == 0 || b.dim == 0) throw ParameterError("bound instance: empty");
  if (b.codebook.size() != b.K * b.dim || b.p.size() != b.K || b.q.size() != b.K) {
    throw DimensionError("bound instance: array sizes do not match K and dim");
  }
  for (const auto* probs : {&b.p, &b.q}) {
    double s = 0.0;
    for (double x : *probs) {
      if (!(x >= 0.0)) throw ParameterError("bound instance: negative probability");
      s += x;
    }
    if (std::abs(s - 1.0) > 1e-9) throw ParameterError("bound instance: probabilities do not sum to 1");
  }
  for (std::size_t k = 0; k < b.K; ++k) {
    const double n = std::sqrt(sq_norm(std::span(b.codebook).subspan(k * b.dim, b.dim)));
    if (n > b.R * (1.0 + 1e-12)) throw ParameterError("bound instance: codebook row outside radius R");
  }
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: size mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    if (q[k] <= 0.0) return std::numeric_limits<double>::infinity();
    kl += p[k] * std::log(p[k] / q[k]);
  }
  return std::max(0.0, kl);
}

PinskerResult pinsker_check(const BoundInstance& b) {
  validate(b);
  const auto mp = posterior_mean(b, b.p), mq = posterior_mean(b, b.q);
  PinskerResult r;
  for (std::size_t j = 0; j < b.dim; ++j) r.lhs += (mq[j] - mp[j]) * (mq[j] - mp[j]);
  r.rhs = 2.0 * b.R * b.R * kl_divergence(b.p, b.q);
  r.holds = r.lhs <= r.rhs + 1e-12;
  return r;
}

VelocityBoundResult velocity_bound_check(std::span<const BoundInstance> instances, double delta) {
  if (instances.empty()) throw ParameterError("velocity_bound_check: no instances");
  VelocityBoundResult out;
  for (const auto& b : instances) {
    validate(b);
    if (b.z_t.size() != b.dim) throw DimensionError("bound instance: z_t has the wrong dimension");
    if (!(b.t >= 0.0 && b.t <= 1.0 - delta)) throw ParameterError("bound instance: t must lie in [0, 1 - delta]");
    const double inv = 1.0 / (1.0 - b.t);
    const auto mp = posterior_mean(b, b.p), mq = posterior_mean(b, b.q);
    double err = 0.0;
    for (std::size_t j = 0; j < b.dim; ++j) {
      const double vp = (mp[j] - b.z_t[j]) * inv, vq = (mq[j] - b.z_t[j]) * inv;
      err += (vq - vp) * (vq - vp);
    }
    const double gap = 2.0 * b.R * b.R * kl_divergence(b.p, b.q) * inv * inv;
    if (!(err <= gap + 1e-12)) ++out.violations;
    out.velocity_mse += err;
    out.bound += gap;
  }
  out.velocity_mse /= static_cast<double>(instances.size());
  out.bound /= static_cast<double>(instances.size());
  out.holds = out.velocity_mse <= out.bound + 1e-12;
  return out;
}

std::size_t effective_rank(std::span<const double> cumulative_variance, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0)) throw ParameterError("effective rank threshold must lie in (0, 1]");
  for (std::size_t k = 0; k < cumulative_variance.size(); ++k) {
    if (cumulative_variance[k] > 0.0 && cumulative_variance[k] >= threshold - 1e-12) return k + 1;
  }
  return 0;
}

SpectrumReport singular_spectrum(std::span<const double> batch, std::size_t n, std::size_t D, double threshold) {
  if (n < 2 || D == 0) throw ParameterError("singular_spectrum needs n >= 2 rows");
  if (batch.size() != n * D) throw DimensionError("singular_spectrum: buffer is not n x D");
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Mat> x(batch.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(D));
  const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();

  SpectrumReport rep;
  rep.threshold = threshold;
  const std::size_t k = std::min(n, D);
  rep.singular_values.assign(k, 0.0);
  rep.cumulative_variance.assign(k, 0.0);
  // Centering a constant batch can leave rounding residue; treat it as zero.
  if (c.squaredNorm() <= 1e-24 * std::max(1.0, x.squaredNorm())) {
    rep.effective_rank = 0;
    return rep;
  }
  Eigen::BDCSVD<Eigen::MatrixXd> svd(c);
  const Eigen::VectorXd s = svd.singularValues();
  double total = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) total += s(i) * s(i);
  double run = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    rep.singular_values[i] = s(static_cast<Eigen::Index>(i));
    run += rep.singular_values[i] * rep.singular_values[i];
    rep.cumulative_variance[i] = run / total;
  }
  rep.effective_rank = effective_rank(rep.cumulative_variance, threshold);
  return rep;
}

FlowSpectra spectrum_along_flow(const flow::FlowModel& model, const vq::Tokenizer& tok, std::size_t n,
                                std::span<const double> times, std::size_t steps, double threshold,
                                std::uint64_t seed) {
  flow::GenerateOptions g;
  g.n = n;
  g.steps = steps;
  g.seed = seed;
  g.snapshot_times.assign(times.begin(), times.end());
  const auto res = flow::euler_generate(model, tok, g);
  const std::size_t L = model.config.latent_len, dc = model.config.code_dim, D = L * dc;
  FlowSpectra out;
  out.times.assign(times.begin(), times.end());
  for (std::size_t k = 0; k < times.size(); ++k) {
    std::vector<double> batch(n * D);
    if (times[k] == 1.0) {
      // Trajectory endpoints are the quantized codes.
      const auto& cb = tok.codebook();
      for (std::size_t i = 0; i < n * L; ++i) {
        const auto row = cb.code(static_cast<std::size_t>(res.tokens[i]));
        std::copy(row.begin(), row.end(), batch.begin() + i * dc);
      }
    } else {
      std::copy(res.snapshots[k].begin(), res.snapshots[k].end(), batch.begin());
    }
    out.reports.push_back(singular_spectrum(batch, n, D, threshold));
  }
  return out;
}

double least_squares_slope(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw DimensionError("least_squares_slope: size mismatch");
  if (x.size() < 2) throw ParameterError("least_squares_slope needs at least two points");
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw ParameterError("least_squares_slope: all x values equal");
  return sxy / sxx;
}

KdeRateResult kde_rate_experiment(const KdeRateOptions& opts, std::uint64_t seed) {
  if (opts.r != 1 && opts.r != 2) throw ParameterError("kde_rate_experiment supports r in {1, 2}");
  std::vector<std::size_t> sizes = opts.sample_sizes;
  std::sort(sizes.begin(), sizes.end());
  sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
  if (sizes.size() < 2) throw ParameterError("kde_rate_experiment needs at least two distinct sample sizes");
  if (sizes.front() < 2) throw ParameterError("kde_rate_experiment sample sizes must be >= 2");
  if (!(opts.bandwidth_scale > 0.0)) throw ParameterError("kde_rate_experiment: bandwidth scale must be positive");
  const std::size_t G = opts.grid_points ? opts.grid_points : (opts.r == 1 ? 2048 : 512);
  if (G < 3) throw ParameterError("kde_rate_experiment: grid too coarse");

  const Mixture mix(opts.r);
  KdeRateResult out;
  out.sample_sizes = sizes;
  out.expected_slope = -4.0 / (static_cast<double>(opts.r) + 4.0);
  const Rng root(seed);
  std::vector<double> lx, ly;
  for (std::size_t idx = 0; idx < sizes.size(); ++idx) {
    const std::size_t N = sizes[idx];
    Rng rng = root.derive(idx);
    std::vector<double> x(N * opts.r);
    for (std::size_t i = 0; i < N; ++i) mix.sample(rng, x.data() + i * opts.r);
    const double h = opts.bandwidth_scale * std::pow(static_cast<double>(N), -1.0 / (static_cast<double>(opts.r) + 4.0));
    const double m = opts.r == 1 ? mise_1d(mix, x, h, G) : mise_2d(mix, x, h, G);
    out.bandwidths.push_back(h);
    out.mise.push_back(m);
    lx.push_back(std::log(static_cast<double>(N)));
    ly.push_back(std::log(m));
  }
  out.slope = least_squares_slope(lx, ly);
  return out;
}

}  // namespace sdflow::geometry
