// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/eval/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "sdflow/autodiff/adam.hpp"
#include "sdflow/autodiff/nn.hpp"
#include "sdflow/common/error.hpp"
#include "sdflow/common/fpenv.hpp"
#include "sdflow/common/log.hpp"
#include "sdflow/manifold/scaffold.hpp"

namespace sdflow::eval {

using ad::Tape;
using ad::Tensor;

namespace {

enum class Pool { kMean, kLast };

// x [B, T, d] -> conv -> silu -> conv -> silu -> pool over time -> linear.
// kLast reads the final time position, which keeps the recent context a
// next-step regressor needs.
struct ConvNet {
  ad::Conv1d<float> conv1, conv2;
  ad::Linear<float> head;
  Pool pool;

  ConvNet(std::size_t features, std::size_t outputs, const ConvNetOptions& o, Pool p, Rng& rng)
      : conv1(features, o.hidden, o.kernel, 1, o.kernel / 2, rng),
        conv2(o.hidden, o.hidden, o.kernel, 1, o.kernel / 2, rng),
        head(o.hidden, outputs, rng),
        pool(p) {}

  Tensor<float> operator()(Tape<float>& tape, const Tensor<float>& x) const {
    auto h = ad::silu(tape, conv1(tape, ad::transpose12(tape, x)));
    h = ad::silu(tape, conv2(tape, h));
    if (pool == Pool::kMean) return head(tape, ad::mean_last(tape, h));
    const std::size_t B = h.shape()[0], C = h.shape()[1], T = h.shape()[2];
    return head(tape, ad::reshape(tape, ad::narrow(tape, h, 2, T - 1, 1), {B, C}));
  }
  std::vector<Tensor<float>> params() const {
    return {conv1.weight, conv1.bias, conv2.weight, conv2.bias, head.weight, head.bias};
  }
};

void check_opts(const ConvNetOptions& o) {
  if (!o.hidden || !o.kernel || !o.epochs || !o.batch_size || !(o.lr > 0) || o.kernel % 2 == 0) {
    throw ConfigError("invalid conv network options (hidden, odd kernel, epochs, batch_size, lr)");
  }
}

// Rows `rows` of a window set (optionally truncated to the first `steps` steps).
Tensor<float> gather(const WindowSet& s, std::span<const std::size_t> rows, std::size_t steps) {
  const std::size_t d = s.features;
  std::vector<float> out(rows.size() * steps * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(s.values.data() + rows[i] * s.window_numel(), steps * d, out.begin() + i * steps * d);
  }
  return Tensor<float>({rows.size(), steps, d}, std::move(out));
}

void check_set(const WindowSet& s, const char* what) {
  if (s.values.size() != s.n * s.window_numel()) {
    throw DimensionError(std::string(what) + ": buffer does not hold n windows");
  }
}

std::vector<double> to_double(std::span<const float> v) { return {v.begin(), v.end()}; }

}  // namespace

DsResult discriminative_score(const WindowSet& real, const WindowSet& synthetic, std::uint64_t seed,
                              const ConvNetOptions& opts) {
  check_opts(opts);
  check_set(real, "discriminative_score real");
  check_set(synthetic, "discriminative_score synthetic");
  if (real.seq_len != synthetic.seq_len || real.features != synthetic.features) {
    throw DimensionError("discriminative_score: window shapes differ");
  }
  const std::size_t m = std::min(real.n, synthetic.n);
  if (m < 50) throw ParameterError("discriminative_score needs at least 50 windows per side");
  if (real.n != synthetic.n) log::warn("discriminative_score: unequal set sizes, truncating to " + std::to_string(m));

  ScopedFlushDenormals ftz;
  Rng root(seed);
  Rng init = root.derive(1), shuffle = root.derive(2);
  std::vector<std::size_t> ri(real.n), si(synthetic.n);
  std::iota(ri.begin(), ri.end(), 0);
  std::iota(si.begin(), si.end(), 0);
  std::shuffle(ri.begin(), ri.end(), shuffle.engine());
  std::shuffle(si.begin(), si.end(), shuffle.engine());
  const std::size_t n_train = static_cast<std::size_t>(std::llround(0.8 * static_cast<double>(m)));
  const std::size_t n_test = m - n_train;
  if (n_test == 0) throw ParameterError("discriminative_score: empty test split");

  // (set, row) pairs; label = set.
  std::vector<std::pair<int, std::size_t>> train, test;
  for (std::size_t i = 0; i < m; ++i) {
    auto& dst = i < n_train ? train : test;
    dst.emplace_back(0, ri[i]);
    dst.emplace_back(1, si[i]);
  }
  const std::size_t T = real.seq_len, d = real.features, w = real.window_numel();
  auto batch_of = [&](std::span<const std::pair<int, std::size_t>> items, std::vector<int>& labels) {
    std::vector<float> x(items.size() * w);
    labels.resize(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
      const WindowSet& s = items[i].first == 0 ? real : synthetic;
      std::copy_n(s.values.data() + items[i].second * w, w, x.begin() + i * w);
      labels[i] = items[i].first;
    }
    return Tensor<float>({items.size(), T, d}, std::move(x));
  };

  ConvNet net(d, 2, opts, Pool::kMean, init);
  ad::Adam<float> adam(net.params(), {.lr = opts.lr});
  std::vector<int> labels;
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    std::shuffle(train.begin(), train.end(), shuffle.engine());
    for (std::size_t s = 0; s < train.size(); s += opts.batch_size) {
      const std::size_t b = std::min(opts.batch_size, train.size() - s);
      auto x = batch_of(std::span(train).subspan(s, b), labels);
      Tape<float> tape;
      adam.zero_grad();
      auto loss = ad::cross_entropy(tape, net(tape, x), labels, 1.0f);
      tape.backward(loss);
      adam.step();
    }
  }
  Tape<float> tape(false);
  auto x = batch_of(test, labels);
  auto logits = net(tape, x);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const int pred = logits.data()[2 * i + 1] > logits.data()[2 * i] ? 1 : 0;
    correct += pred == labels[i];
  }
  DsResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(test.size());
  r.ds = std::abs(r.accuracy - 0.5);
  r.per_class = m;
  return r;
}

double predictive_score(const WindowSet& synthetic_train, const WindowSet& real_test, std::uint64_t seed,
                        const ConvNetOptions& opts) {
  check_opts(opts);
  check_set(synthetic_train, "predictive_score synthetic");
  check_set(real_test, "predictive_score real");
  if (synthetic_train.seq_len != real_test.seq_len || synthetic_train.features != real_test.features) {
    throw DimensionError("predictive_score: window shapes differ");
  }
  const std::size_t T = real_test.seq_len, d = real_test.features;
  if (T < 2) throw ParameterError("predictive_score needs windows of length >= 2");
  if (synthetic_train.n == 0 || real_test.n == 0) throw ParameterError("predictive_score: empty input");

  ScopedFlushDenormals ftz;
  Rng root(seed);
  Rng init = root.derive(1), shuffle = root.derive(2);
  auto targets = [&](const WindowSet& s, std::span<const std::size_t> rows) {
    std::vector<float> y(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(s.values.data() + rows[i] * s.window_numel() + (T - 1) * d, d, y.begin() + i * d);
    }
    return Tensor<float>({rows.size(), d}, std::move(y));
  };

  ConvNet net(d, d, opts, Pool::kLast, init);
  ad::Adam<float> adam(net.params(), {.lr = opts.lr});
  std::vector<std::size_t> order(synthetic_train.n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    for (std::size_t s = 0; s < order.size(); s += opts.batch_size) {
      const auto rows = std::span(order).subspan(s, std::min(opts.batch_size, order.size() - s));
      Tape<float> tape;
      adam.zero_grad();
      auto loss = ad::mse(tape, net(tape, gather(synthetic_train, rows, T - 1)), targets(synthetic_train, rows));
      tape.backward(loss);
      adam.step();
    }
  }
  std::vector<std::size_t> all(real_test.n);
  std::iota(all.begin(), all.end(), 0);
  Tape<float> tape(false);
  auto pred = net(tape, gather(real_test, all, T - 1));
  auto truth = targets(real_test, all);
  double abs_err = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) abs_err += std::abs(double(pred.data()[i]) - truth.data()[i]);
  return abs_err / static_cast<double>(pred.numel());
}

double frechet_distance(std::span<const double> a, std::size_t na, std::span<const double> b, std::size_t nb,
                        std::size_t dim) {
  if (dim == 0 || a.size() != na * dim || b.size() != nb * dim) throw DimensionError("frechet_distance: bad buffers");
  if (na < 2 * dim || nb < 2 * dim) {
    throw ParameterError("frechet_distance needs at least 2*dim samples per side (dim=" + std::to_string(dim) + ")");
  }
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  auto moments = [&](std::span<const double> x, std::size_t n, Eigen::VectorXd& mean, Eigen::MatrixXd& cov) {
    Eigen::Map<const Mat> m(x.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
    mean = m.colwise().mean().transpose();
    const Eigen::MatrixXd c = m.rowwise() - mean.transpose();
    cov = (c.transpose() * c) / static_cast<double>(n - 1);
  };
  Eigen::VectorXd m1, m2;
  Eigen::MatrixXd s1, s2;
  moments(a, na, m1, s1);
  moments(b, nb, m2, s2);

  auto clipped = [](const Eigen::VectorXd& ev, const char* what) {
    const double scale = std::max(1.0, ev.cwiseAbs().maxCoeff());
    if (ev.minCoeff() < -1e-9 * scale) {
      log::warn(std::string("frechet_distance: ") + what + " not PSD (min eigenvalue " +
                std::to_string(ev.minCoeff()) + "), clipping at 0");
    }
    return ev.cwiseMax(0.0);
  };
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(s1);
  const Eigen::VectorXd r1 = clipped(e1.eigenvalues(), "covariance").cwiseSqrt();
  const Eigen::MatrixXd sqrt1 = e1.eigenvectors() * r1.asDiagonal() * e1.eigenvectors().transpose();
  Eigen::MatrixXd inner = sqrt1 * s2 * sqrt1;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e2(inner, Eigen::EigenvaluesOnly);
  const double tr_sqrt = clipped(e2.eigenvalues(), "product").cwiseSqrt().sum();
  const double fd = (m1 - m2).squaredNorm() + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, fd);
}

double latent_frechet_distance(const vq::Tokenizer& tok, const WindowSet& real, const WindowSet& synthetic) {
  const auto& vc = tok.config();
  const std::size_t L = vc.latent_len(), dc = vc.code_dim;
  auto pooled = [&](const WindowSet& s) {
    check_set(s, "latent_frechet_distance");
    if (s.seq_len != vc.seq_len || s.features != vc.features) {
      throw DimensionError("latent_frechet_distance: windows do not match the tokenizer");
    }
    const auto h = tok.encode_windows(s.values, s.n);
    std::vector<double> out(s.n * dc, 0.0);
    for (std::size_t i = 0; i < s.n; ++i) {
      for (std::size_t p = 0; p < L; ++p) {
        for (std::size_t j = 0; j < dc; ++j) out[i * dc + j] += h[(i * L + p) * dc + j] / static_cast<double>(L);
      }
    }
    return out;
  };
  return frechet_distance(pooled(real), real.n, pooled(synthetic), synthetic.n, dc);
}

DistanceSummary summarize(std::span<const double> v) {
  DistanceSummary s;
  if (v.empty()) return s;
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(v.size()));
  return s;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ParameterError("percentile of an empty set");
  if (!(q >= 0.0 && q <= 100.0)) throw ParameterError("percentile q must lie in [0, 100]");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

NnAudit nn_audit(const WindowSet& train, const WindowSet& generated, const WindowSet& heldout) {
  check_set(train, "nn_audit train");
  check_set(generated, "nn_audit generated");
  check_set(heldout, "nn_audit heldout");
  const std::size_t dim = train.window_numel();
  if (generated.window_numel() != dim || heldout.window_numel() != dim) {
    throw DimensionError("nn_audit: window shapes differ");
  }
  if (train.n < 2) throw ParameterError("nn_audit needs at least 2 training windows");
  if (train.n < 100) log::warn("nn_audit: fewer than 100 training windows, 1st percentile is unstable");
  const auto tr = to_double(train.values);
  const auto tt = manifold::nn_distances(tr, tr, dim, /*exclude_self=*/true);
  const auto gt = manifold::nn_distances(to_double(generated.values), tr, dim);
  const auto ht = manifold::nn_distances(to_double(heldout.values), tr, dim);
  NnAudit a;
  a.threshold = percentile(tt, 1.0);
  auto rate = [&](const std::vector<double>& d) {
    if (d.empty()) return 0.0;
    const auto c = std::count_if(d.begin(), d.end(), [&](double x) { return x <= a.threshold; });
    return static_cast<double>(c) / static_cast<double>(d.size());
  };
  a.copy_rate = rate(gt);
  a.heldout_copy_rate = rate(ht);
  a.train_nn = summarize(tt);
  a.generated_nn = summarize(gt);
  a.heldout_nn = summarize(ht);
  return a;
}

MetricReport evaluate_all(const vq::Tokenizer& tok, const WindowSet& train, const WindowSet& real,
                          const WindowSet& synthetic, std::uint64_t seed, const ConvNetOptions& opts) {
  MetricReport r;
  r.seed = seed;
  r.ds = discriminative_score(real, synthetic, seed, opts).ds;
  r.ps = predictive_score(synthetic, real, seed, opts);
  r.lfd = latent_frechet_distance(tok, real, synthetic);
  const auto audit = nn_audit(train, synthetic, real);
  r.copy_rate = audit.copy_rate;
  r.nn_generated = audit.generated_nn;
  r.nn_heldout = audit.heldout_nn;
  return r;
}

std::string report_json(const MetricReport& r, const std::string& config_hash) {
  nlohmann::ordered_json j;
  j["note"] = kClassifierNote;
  j["config_hash"] = config_hash;
  j["code_version"] = SDFLOW_GIT_HASH;
  j["seed"] = r.seed;
  j["ds"] = r.ds;
  j["ps"] = r.ps;
  j["lfd"] = r.lfd;
  j["copy_rate"] = r.copy_rate;
  j["nn_generated"] = {{"mean", r.nn_generated.mean}, {"std", r.nn_generated.std}};
  j["nn_heldout"] = {{"mean", r.nn_heldout.mean}, {"std", r.nn_heldout.std}};
  return j.dump(2) + "\n";
}

std::string report_text(const MetricReport& r, const std::string& config_hash) {
  std::ostringstream os;
  os << "# " << kClassifierNote << "\n";
  os << "# config " << config_hash << "  code " << SDFLOW_GIT_HASH << "  seed " << r.seed << "\n";
  os << std::fixed << std::setprecision(6);
  auto row = [&](const char* k, double v) { os << std::left << std::setw(20) << k << std::right << std::setw(14) << v << "\n"; };
  row("ds", r.ds);
  row("ps", r.ps);
  row("lfd", r.lfd);
  row("copy_rate", r.copy_rate);
  row("nn_generated_mean", r.nn_generated.mean);
  row("nn_generated_std", r.nn_generated.std);
  row("nn_heldout_mean", r.nn_heldout.mean);
  row("nn_heldout_std", r.nn_heldout.std);
  return os.str();
}

}  // namespace sdflow::eval
