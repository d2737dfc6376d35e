// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "sdflow/common/error.hpp"
#include "sdflow/manifold/scaffold.hpp"
#include "support/gradcheck.hpp"

using namespace sdflow;
using namespace sdflow::manifold;

TEST_CASE("init_scaffold") {
  auto s = init_scaffold(2000, 8, 64, 3);
  double ss = 0.0;
  for (float v : s.U.data()) ss += double(v) * v;
  const double sd = std::sqrt(ss / s.U.numel());
  CHECK(sd == doctest::Approx(0.01).epsilon(0.2));
  CHECK(std::abs(sd - 0.01) <= 0.002);
  CHECK(init_scaffold(2000, 8, 64, 3).U.values() == s.U.values());
  CHECK(init_scaffold(2000, 8, 64, 3).V.values() == s.V.values());
  CHECK_THROWS_AS(init_scaffold(10, 65, 64, 1), ConfigError);
  CHECK_THROWS_AS(init_scaffold(4, 5, 64, 1), ConfigError);
  CHECK_THROWS_AS(init_scaffold(10, 0, 64, 1), ConfigError);
}

TEST_CASE("anchor_init") {
  Rng rng(7);
  const std::size_t L = 6, dc = 8, D = L * dc, r = 5;
  auto s = init_scaffold(10, r, D, 1);
  std::vector<float> u(r);
  for (auto& x : u) x = static_cast<float>(rng.normal());

  SUBCASE("rows are unit norm") {
    auto z = anchor_init(u, s.V, L, dc, InitNorm::kPerRow, rng);
    double fro = 0;
    for (std::size_t p = 0; p < L; ++p) {
      double n = 0;
      for (std::size_t j = 0; j < dc; ++j) n += double(z[p * dc + j]) * z[p * dc + j];
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
      fro += n;
    }
    CHECK(std::abs(std::sqrt(fro) - std::sqrt(double(L))) < 1e-5);
  }
  SUBCASE("global mode has Frobenius norm sqrt(L)") {
    auto z = anchor_init(u, s.V, L, dc, InitNorm::kGlobal, rng);
    double fro = 0;
    for (float x : z) fro += double(x) * x;
    CHECK(std::abs(std::sqrt(fro) - std::sqrt(double(L))) < 1e-5);
  }
  SUBCASE("scale invariance") {
    auto z = anchor_init(u, s.V, L, dc, InitNorm::kPerRow, rng);
    auto scaled = u;
    for (auto& x : scaled) x *= 3.7f;
    auto z2 = anchor_init(scaled, s.V, L, dc, InitNorm::kPerRow, rng);
    for (std::size_t i = 0; i < D; ++i) CHECK(z2[i] == doctest::Approx(z[i]).epsilon(1e-6));
  }
  SUBCASE("zero row falls back to a unit vector") {
    std::vector<float> zero(r, 0.0f);
    auto z = anchor_init(zero, s.V, L, dc, InitNorm::kPerRow, rng);
    double n = 0;
    for (std::size_t j = 0; j < dc; ++j) n += double(z[j]) * z[j];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-5));
  }
  SUBCASE("projection oracle") {
    // Semi-orthogonal V and u = Vᵀ z*: the output is the row-normalized projection of z*.
    Eigen::MatrixXd G = Eigen::MatrixXd::Random(D, r);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(D, r);
    ad::Tensor<float> V({D, r});
    for (std::size_t i = 0; i < D; ++i) {
      for (std::size_t k = 0; k < r; ++k) V.data()[i * r + k] = static_cast<float>(Q(i, k));
    }
    Eigen::VectorXd zs(D);
    for (std::size_t p = 0; p < L; ++p) {
      Eigen::VectorXd row = Eigen::VectorXd::Random(dc).normalized();
      zs.segment(p * dc, dc) = row;
    }
    // Oracle in double: P = Q Qᵀ, then normalize rows.
    Eigen::VectorXd proj = Q * (Q.transpose() * zs);
    for (std::size_t p = 0; p < L; ++p) proj.segment(p * dc, dc).normalize();
    const double oracle = (proj - zs).norm();
    Eigen::VectorXd coeff = Q.transpose() * zs;
    std::vector<float> uu(r);
    for (std::size_t k = 0; k < r; ++k) uu[k] = static_cast<float>(coeff(k));
    auto z = anchor_init(uu, V, L, dc, InitNorm::kPerRow, rng);
    double err = 0;
    for (std::size_t i = 0; i < D; ++i) err += std::pow(double(z[i]) - zs(i), 2);
    CHECK(std::abs(std::sqrt(err) - oracle) < 1e-5);  // float storage of V and z
  }
  SUBCASE("batched version agrees and differentiates") {
    ad::Tape<float> tape(false);
    ad::Tensor<float> coords({1, r}, u);
    auto zb = anchor_init(tape, coords, s.V, L, dc, InitNorm::kPerRow);
    auto z = anchor_init(u, s.V, L, dc, InitNorm::kPerRow, rng);
    for (std::size_t i = 0; i < D; ++i) CHECK(zb.data()[i] == doctest::Approx(z[i]).epsilon(1e-5));
  }
}

TEST_CASE("coord_reg_loss") {
  ad::Tape<double> tape;
  SUBCASE("zero mean unit std") {
    ad::Tensor<double> U({2, 2}, {1, -1, -1, 1});
    CHECK(coord_reg_loss(tape, U, 0.1, 10.0).item() == doctest::Approx(0.0));
  }
  SUBCASE("all zeros") {
    ad::Tensor<double> U({4, 3});
    CHECK(coord_reg_loss(tape, U, 0.1, 10.0).item() == doctest::Approx(10.0));
  }
  SUBCASE("direct recomputation") {
    Rng rng(8);
    auto U = testing::random_tensor<double>({30, 4}, rng, 0.7, false);
    for (auto& v : U.data()) v += 0.3;
    double mean_sq = 0, all = 0;
    for (int k = 0; k < 4; ++k) {
      double m = 0;
      for (int i = 0; i < 30; ++i) m += U.data()[i * 4 + k];
      m /= 30;
      mean_sq += m * m;
    }
    for (double v : U.data()) all += v;
    all /= 120;
    double var = 0;
    for (double v : U.data()) var += (v - all) * (v - all);
    const double expected = 0.1 * mean_sq + 10.0 * std::abs(std::sqrt(var / 120) - 1.0);
    CHECK(std::abs(coord_reg_loss(tape, U, 0.1, 10.0).item() - expected) < 1e-9);
    const auto stats = coord_stats(std::vector<float>(U.data().begin(), U.data().end()), 30, 4);
    CHECK(stats.mean_norm == doctest::Approx(std::sqrt(mean_sq)).epsilon(1e-5));
    auto r = testing::gradcheck<double>("coord_reg", {testing::random_tensor<double>({6, 3}, rng)},
                                        [](ad::Tape<double>& t, auto& in) { return coord_reg_loss(t, in[0], 0.1, 10.0); });
    CHECK(r.rel_error < 1e-6);
  }
  CHECK_THROWS_AS(coord_reg_loss(tape, ad::Tensor<double>({1, 3}), 0.1, 1.0), ConfigError);
}

TEST_CASE("mean_nn_distance") {
  const std::vector<double> pts = {0, 1, 3};
  CHECK(mean_nn_distance(pts, 3, 1) == doctest::Approx(4.0 / 3.0));
  const std::vector<double> dup = {0.5, 2, 0.5, 2, 0.5, 2};
  CHECK(mean_nn_distance(dup, 3, 2) == 0.0);
  CHECK_THROWS_AS(mean_nn_distance(std::vector<double>{1.0}, 1, 1), ConfigError);

  Rng rng(9);
  std::vector<double> u(200 * 8);
  for (auto& x : u) x = rng.normal();
  double brute = 0;
  for (int i = 0; i < 200; ++i) {
    double best = 1e300;
    for (int j = 0; j < 200; ++j) {
      if (i == j) continue;
      double d = 0;
      for (int k = 0; k < 8; ++k) d += std::pow(u[i * 8 + k] - u[j * 8 + k], 2);
      best = std::min(best, std::sqrt(d));
    }
    brute += best;
  }
  CHECK(std::abs(mean_nn_distance(u, 200, 8) - brute / 200) < 1e-9);
}

TEST_CASE("anchor prior") {
  Rng rng(10);
  std::vector<double> coords(50 * 3);
  for (auto& x : coords) x = rng.normal();

  SUBCASE("bandwidth tracks alpha and coordinates") {
    AnchorPrior p(coords, 50, 3, 0.5);
    const double h = p.h();
    p.set_alpha(1.0);
    CHECK(p.h() == 2 * h);
    auto moved = coords;
    moved[4] += 0.3;
    AnchorPrior q(moved, 50, 3, 1.0);
    CHECK(q.h() == doctest::Approx(mean_nn_distance(moved, 50, 3)));
  }
  SUBCASE("zero bandwidth returns anchor rows") {
    AnchorPrior p(coords, 50, 3, 0.0);
    for (int i = 0; i < 20; ++i) {
      std::size_t j = 0;
      auto u = p.sample(rng, &j);
      for (int k = 0; k < 3; ++k) CHECK(u[k] == coords[j * 3 + k]);
    }
  }
  SUBCASE("single anchor moments") {
    auto p = AnchorPrior::with_bandwidth({1.5, -2.0}, 1, 2, 0.3);
    const int n = 10000;
    double m0 = 0, m1 = 0;
    for (int i = 0; i < n; ++i) {
      auto u = p.sample(rng);
      m0 += u[0];
      m1 += u[1];
    }
    CHECK(std::abs(m0 / n - 1.5) < 3 * 0.3 / std::sqrt(n));
    CHECK(std::abs(m1 / n + 2.0) < 3 * 0.3 / std::sqrt(n));
  }
  SUBCASE("law of total variance") {
    auto p = AnchorPrior::with_bandwidth(coords, 50, 3, 0.4);
    const int n = 100000;
    std::vector<double> s1(3, 0), s2(3, 0);
    for (int i = 0; i < n; ++i) {
      auto u = p.sample(rng);
      for (int k = 0; k < 3; ++k) {
        s1[k] += u[k];
        s2[k] += u[k] * u[k];
      }
    }
    for (int k = 0; k < 3; ++k) {
      double m = 0, v = 0;
      for (int i = 0; i < 50; ++i) m += coords[i * 3 + k];
      m /= 50;
      for (int i = 0; i < 50; ++i) v += std::pow(coords[i * 3 + k] - m, 2);
      v /= 50;
      const double emp = s2[k] / n - std::pow(s1[k] / n, 2);
      CHECK(emp == doctest::Approx(v + 0.16).epsilon(0.05));
    }
  }
  SUBCASE("density") {
    auto single = AnchorPrior::with_bandwidth({0, 0, 0}, 1, 3, 0.2);
    const double origin[3] = {0, 0, 0};
    CHECK(single.density(origin) == doctest::Approx(std::pow(2 * std::numbers::pi * 0.04, -1.5)));
    const double far[3] = {5, 5, 5};
    CHECK(single.density(far) < 1e-12);

    auto line = AnchorPrior::with_bandwidth({-1.0, 0.2, 2.5}, 3, 1, 0.3);
    const int grid = 20001;
    const double lo = -6, hi = 8, dx = (hi - lo) / (grid - 1);
    double integral = 0;
    for (int i = 0; i < grid; ++i) {
      const double x = lo + i * dx;
      const double w = (i == 0 || i == grid - 1) ? 0.5 : 1.0;
      integral += w * line.density(std::span<const double>(&x, 1)) * dx;
    }
    CHECK(std::abs(integral - 1.0) < 1e-3);

    AnchorPrior p(coords, 50, 3, 0.7);
    for (int q = 0; q < 1000; ++q) {
      double u[3] = {rng.normal(), rng.normal(), rng.normal()};
      double direct = 0;
      for (int i = 0; i < 50; ++i) {
        double d2 = 0;
        for (int k = 0; k < 3; ++k) d2 += std::pow(u[k] - coords[i * 3 + k], 2);
        direct += std::exp(-d2 / (2 * p.h() * p.h())) / std::pow(2 * std::numbers::pi * p.h() * p.h(), 1.5);
      }
      CHECK(std::abs(p.density(u) - direct / 50) < 1e-9);
    }
  }
  SUBCASE("sampling matches the mixture (two-sample KS)") {
    const std::vector<double> centers = {-1.0, 0.2, 0.5, 2.5};
    const double h = 0.35;
    auto p = AnchorPrior::with_bandwidth(centers, 4, 1, h);
    auto cdf = [&](double x) {
      double c = 0;
      for (double m : centers) c += 0.5 * std::erfc(-(x - m) / (h * std::sqrt(2.0)));
      return c / centers.size();
    };
    const int n = 10000;
    std::vector<double> a(n), b(n);
    Rng inv(99);
    for (int i = 0; i < n; ++i) {
      a[i] = p.sample(rng)[0];
      const double target = inv.uniform();
      double lo = -10, hi = 10;
      for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (cdf(mid) < target ? lo : hi) = mid;
      }
      b[i] = 0.5 * (lo + hi);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double d = 0;
    std::size_t i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
      if (a[i] <= b[j]) ++i; else ++j;
      d = std::max(d, std::abs(double(i) / n - double(j) / n));
    }
    const double critical = 1.628 * std::sqrt(2.0 / n);  // alpha = 0.01
    CHECK(d < critical);
  }
}
