// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <numbers>

#include "sdflow/common/error.hpp"
#include "sdflow/common/parallel.hpp"
#include "sdflow/geometry/lab.hpp"

using namespace sdflow;
using namespace sdflow::geometry;

namespace {

BoundInstance two_code_instance() {
  BoundInstance b;
  b.K = 2;
  b.dim = 2;
  b.R = 1.0;
  b.codebook = {1.0, 0.0, -1.0, 0.0};
  b.p = {1.0, 0.0};
  b.q = {0.5, 0.5};
  b.t = 0.5;
  b.z_t = {0.2, -0.3};
  return b;
}

}  // namespace

TEST_CASE("gaussian transport cost is data second moment plus dimension") {
  SUBCASE("zero data") {
    const auto e = transport_gaussian(256, [](Rng&, std::span<double> z) { std::fill(z.begin(), z.end(), 0.0); },
                                      20000, 1);
    CHECK(std::abs(e.mean - 256.0) < 3.0 * e.std_err);
  }
  SUBCASE("unit vectors") {
    const auto e = transport_gaussian(
        512,
        [](Rng& rng, std::span<double> z) {
          std::fill(z.begin(), z.end(), 0.0);
          z[rng.index(z.size())] = rng.uniform() < 0.5 ? -1.0 : 1.0;
        },
        20000, 2);
    CHECK(std::abs(e.mean - 513.0) < 3.0 * e.std_err);
  }
  SUBCASE("scalar case against the closed form 1 + C") {
    // z = ±2 gives C = 4.
    const auto e = transport_gaussian(1, [](Rng& rng, std::span<double> z) { z[0] = rng.uniform() < 0.5 ? -2.0 : 2.0; },
                                      200000, 3);
    CHECK(std::abs(e.mean - 5.0) < 3.0 * e.std_err);
  }
  CHECK_THROWS_AS(transport_gaussian(0, [](Rng&, std::span<double>) {}, 10, 1), ParameterError);
}

TEST_CASE("semi-orthogonal bases") {
  Rng rng(4);
  const auto V = semi_orthogonal(64, 5, rng);
  CHECK((V.transpose() * V - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(std::abs(sigma_max(V) - 1.0) < 1e-10);
  CHECK_THROWS_AS(semi_orthogonal(3, 4, rng), ParameterError);
}

TEST_CASE("anchored transport stays within the manifold bound") {
  SUBCASE("no noise, no residual") {
    TransportExperiment ex;
    ex.D = 64;
    ex.r = 4;
    ex.h = 0.0;
    ex.n_trials = 1000;
    const auto a = transport_anchored(ex, 1);
    CHECK(a.estimate.mean < 1e-12);
  }
  SUBCASE("coordinate noise only matches h²") {
    TransportExperiment ex;
    ex.D = 128;
    ex.r = 8;
    ex.h = 0.1;
    ex.n_trials = 100000;
    const auto a = transport_anchored(ex, 2);
    CHECK(a.orthonormality_error < 1e-10);
    CHECK(a.bound == doctest::Approx(0.01).epsilon(1e-9));
    CHECK(a.estimate.mean <= a.bound + 3.0 * a.estimate.std_err);
    CHECK(a.estimate.mean == doctest::Approx(0.01).epsilon(0.05));
  }
  SUBCASE("residual adds ε² exactly") {
    TransportExperiment ex;
    ex.D = 64;
    ex.r = 4;
    ex.h = 0.0;
    ex.epsilon = 0.3;
    ex.n_trials = 500;
    const auto a = transport_anchored(ex, 3);
    CHECK(a.estimate.mean == doctest::Approx(0.09).epsilon(1e-9));
  }
  SUBCASE("independent of the ambient dimension") {
    std::vector<double> est;
    for (std::size_t D : {128, 512, 2048}) {
      TransportExperiment ex;
      ex.D = D;
      ex.r = 8;
      ex.h = 0.1;
      ex.epsilon = 0.05;
      ex.n_trials = 5000;
      const auto a = transport_anchored(ex, 7);
      CHECK(a.estimate.mean <= a.bound + 3.0 * a.estimate.std_err);
      est.push_back(a.estimate.mean);
    }
    for (double a : est) {
      for (double b : est) CHECK(std::abs(a - b) / std::min(a, b) < 0.1);
    }
  }
}

TEST_CASE("pinsker bound on posterior means") {
  auto b = two_code_instance();
  const auto r = pinsker_check(b);
  CHECK(r.lhs == doctest::Approx(1.0));
  CHECK(r.rhs == doctest::Approx(2.0 * std::numbers::ln2));
  CHECK(r.holds);

  b.q = b.p;
  const auto same = pinsker_check(b);
  CHECK(same.lhs == 0.0);
  CHECK(same.rhs == 0.0);
  CHECK(same.holds);

  b.p = {0.5, 0.5};
  b.q = {1.0, 0.0};
  const auto inf = pinsker_check(b);
  CHECK(std::isinf(inf.rhs));
  CHECK(inf.holds);

  Rng rng(9);
  std::size_t failures = 0;
  for (int i = 0; i < 100000; ++i) failures += !pinsker_check(random_bound_instance(rng)).holds;
  CHECK(failures == 0);

  b.p = {0.7, 0.7};
  CHECK_THROWS_AS(pinsker_check(b), ParameterError);
  b = two_code_instance();
  b.codebook[0] = 2.0;
  CHECK_THROWS_AS(pinsker_check(b), ParameterError);
}

TEST_CASE("velocity error bounded by weighted cross-entropy gap") {
  const std::vector<BoundInstance> one{two_code_instance()};
  const auto r = velocity_bound_check(one);
  CHECK(r.velocity_mse == doctest::Approx(4.0));
  CHECK(r.bound == doctest::Approx(8.0 * std::numbers::ln2));
  CHECK(r.holds);

  auto exact = two_code_instance();
  exact.q = exact.p;
  const std::vector<BoundInstance> bayes{exact};
  const auto z = velocity_bound_check(bayes);
  CHECK(z.velocity_mse == 0.0);
  CHECK(z.bound == 0.0);

  Rng rng(10);
  std::vector<BoundInstance> many;
  for (int i = 0; i < 10000; ++i) many.push_back(random_bound_instance(rng));
  const auto m = velocity_bound_check(many);
  CHECK(m.violations == 0);
  CHECK(m.holds);

  auto late = two_code_instance();
  late.t = 1.0;
  const std::vector<BoundInstance> bad{late};
  CHECK_THROWS_AS(velocity_bound_check(bad), ParameterError);
}

TEST_CASE("singular spectrum and effective rank") {
  SUBCASE("rank one") {
    std::vector<double> x(10 * 6);
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 6; ++j) x[i * 6 + j] = (double(i) - 3.0) * (double(j) + 1.0);
    }
    const auto s = singular_spectrum(x, 10, 6, 0.9);
    CHECK(s.effective_rank == 1);
    CHECK(s.singular_values[1] < 1e-10 * s.singular_values[0]);
    CHECK(s.cumulative_variance.back() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("cumulative arithmetic") {
    const std::vector<double> cum{100.0 / 101.01, 101.0 / 101.01, 1.0};
    CHECK(effective_rank(cum, 0.99) == 1);
    CHECK(effective_rank(cum, 0.995) == 2);
    CHECK_THROWS_AS(effective_rank(cum, 0.0), ParameterError);
  }
  SUBCASE("flat versus planted low rank") {
    Rng rng(3);
    const std::size_t n = 128, D = 128;
    std::vector<double> iid(n * D), planted(n * D, 0.0);
    for (double& v : iid) v = rng.normal();
    std::vector<double> basis(8 * D);
    for (double& v : basis) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < 8; ++k) {
        const double c = rng.normal();
        for (std::size_t j = 0; j < D; ++j) planted[i * D + j] += c * basis[k * D + j];
      }
    }
    const auto a = singular_spectrum(iid, n, D, 0.9);
    const auto b = singular_spectrum(planted, n, D, 0.9);
    // Marchenko-Pastur with aspect ratio 1: the top 51% of eigenvalues carry
    // 90% of the variance, so about 65 of 127 centered directions.
    CHECK(a.effective_rank >= 62);
    CHECK(a.effective_rank <= 68);
    CHECK(b.effective_rank <= 8);
    for (std::size_t i = 1; i < a.cumulative_variance.size(); ++i) {
      CHECK(a.cumulative_variance[i] >= a.cumulative_variance[i - 1]);
      CHECK(a.singular_values[i] <= a.singular_values[i - 1]);
    }
  }
  SUBCASE("constant batch is degenerate") {
    const std::vector<double> x(5 * 3, 0.1);
    const auto s = singular_spectrum(x, 5, 3, 0.9);
    CHECK(s.effective_rank == 0);
    for (double v : s.singular_values) CHECK(v == 0.0);
  }
  CHECK_THROWS_AS(singular_spectrum(std::vector<double>(3), 1, 3, 0.9), ParameterError);
}

TEST_CASE("least squares slope") {
  const std::vector<double> x{0.0, 1.0, 2.0}, y{1.0, 3.0, 5.0};
  CHECK(least_squares_slope(x, y) == doctest::Approx(2.0));
  CHECK_THROWS_AS(least_squares_slope(std::vector<double>{1.0}, std::vector<double>{1.0}), ParameterError);
}

TEST_CASE("kde rate experiment") {
  KdeRateOptions o;
  o.r = 1;
  o.sample_sizes = {100, 1000};
  o.grid_points = 512;
  const auto a = kde_rate_experiment(o, 1);
  const auto b = kde_rate_experiment(o, 1);
  CHECK(a.slope == b.slope);
  CHECK(a.expected_slope == doctest::Approx(-0.8));
  CHECK(a.mise[1] < a.mise[0]);
  CHECK(a.bandwidths[1] == doctest::Approx(0.9 * std::pow(1000.0, -0.2)));

  o.sample_sizes = {500};
  CHECK_THROWS_AS(kde_rate_experiment(o, 1), ParameterError);
  o.sample_sizes = {100, 200};
  o.r = 3;
  CHECK_THROWS_AS(kde_rate_experiment(o, 1), ParameterError);
}

TEST_CASE("geometry experiments do not depend on thread count") {
  TransportExperiment ex;
  ex.D = 32;
  ex.r = 4;
  ex.epsilon = 0.1;
  ex.n_trials = 2000;
  set_thread_count(1);
  const double one = transport_anchored(ex, 5).estimate.mean;
  set_thread_count(3);
  const double three = transport_anchored(ex, 5).estimate.mean;
  set_thread_count(1);
  CHECK(one == three);
}
