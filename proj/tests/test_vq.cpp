// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>

#include "sdflow/common/error.hpp"
#include "sdflow/vq/tokenizer.hpp"
#include "support/gradcheck.hpp"
#include "support/tempdir.hpp"

using namespace sdflow;
using namespace sdflow::vq;

namespace {

std::vector<float> random_unit_rows(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<float> v(n * d);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  normalize_rows(v, d);
  return v;
}

VqConfig tiny_config() {
  VqConfig c;
  c.seq_len = 8;
  c.features = 2;
  c.downsample = 2;
  c.codebook_size = 8;
  c.code_dim = 4;
  c.hidden = 6;
  return c;
}

}  // namespace

TEST_CASE("quantize") {
  Rng rng(1);
  auto cb = Codebook::random(16, 8, rng);
  SUBCASE("idempotent on codes") {
    for (std::size_t k = 0; k < cb.size; ++k) CHECK(quantize(cb.code(k), cb) == k);
  }
  SUBCASE("hand example") {
    Codebook two(2, 2);
    two.codes = {1, 0, 0, 1};
    const float h[2] = {0.6f, 0.8f};
    CHECK(quantize(std::span<const float>(h, 2), two) == 1);
  }
  SUBCASE("ties take the lowest index") {
    Codebook dup(3, 2);
    dup.codes = {0, 1, 1, 0, 1, 0};
    const float h[2] = {1.0f, 0.0f};
    CHECK(quantize(std::span<const float>(h, 2), dup) == 1);
  }
  SUBCASE("scale invariance") {
    for (int i = 0; i < 1000; ++i) {
      auto h = random_unit_rows(1, 8, rng);
      const auto k = quantize(h, cb);
      const double alpha = std::exp(rng.uniform(-3.0, 3.0));
      for (auto& v : h) v = static_cast<float>(v * alpha);
      CHECK(quantize(h, cb) == k);
    }
  }
  SUBCASE("errors") {
    Codebook empty;
    const float h[1] = {1.0f};
    CHECK_THROWS_AS(quantize(std::span<const float>(h, 1), empty), ConfigError);
    const int bad[1] = {16};
    CHECK_THROWS_AS(dequantize(std::span<const int>(bad, 1), cb), DataError);
  }
}

TEST_CASE("dequantize") {
  Rng rng(2);
  auto cb = Codebook::random(10, 5, rng);
  const std::vector<int> zeros = {0, 0, 0};
  auto rows = dequantize(zeros, cb);
  for (int r = 0; r < 3; ++r) {
    for (int j = 0; j < 5; ++j) CHECK(rows[r * 5 + j] == cb.codes[j]);
  }
  std::vector<int> y(50);
  for (auto& v : y) v = static_cast<int>(rng.index(10));
  auto h = dequantize(y, cb);
  CHECK(quantize_rows(h, cb) == y);
  for (int r = 0; r < 50; ++r) {
    double n = 0;
    for (int j = 0; j < 5; ++j) n += h[r * 5 + j] * h[r * 5 + j];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("ema_update") {
  Rng rng(3);
  SUBCASE("unassigned code keeps its direction") {
    auto cb = Codebook::random(4, 6, rng);
    const auto before = std::vector<float>(cb.code(2).begin(), cb.code(2).end());
    auto lat = random_unit_rows(5, 6, rng);
    const std::vector<int> idx = {0, 1, 0, 3, 1};
    ema_update(cb, lat, idx, 0.99);
    for (int j = 0; j < 6; ++j) CHECK(cb.code(2)[j] == doctest::Approx(before[j]).epsilon(1e-6));
  }
  SUBCASE("converges to the normalized repeated latent") {
    auto cb = Codebook::random(4, 6, rng);
    std::vector<float> v = {3, -1, 2, 0.5f, 0, 1};
    std::vector<float> batch;
    for (int i = 0; i < 3; ++i) batch.insert(batch.end(), v.begin(), v.end());
    const std::vector<int> idx = {1, 1, 1};
    for (int s = 0; s < 3000; ++s) ema_update(cb, batch, idx, 0.99);
    normalize_rows(v, 6);
    for (int j = 0; j < 6; ++j) CHECK(cb.code(1)[j] == doctest::Approx(v[j]).epsilon(1e-5));
  }
  SUBCASE("cluster sizes stay non-negative and rows unit norm") {
    auto cb = Codebook::random(8, 4, rng);
    for (int s = 0; s < 1000; ++s) {
      auto lat = random_unit_rows(6, 4, rng);
      auto idx = quantize_rows(lat, cb);
      ema_update(cb, lat, idx, 0.9);
    }
    for (double c : cb.ema_cluster_size) CHECK(c >= 0.0);
    for (std::size_t k = 0; k < 8; ++k) {
      double n = 0;
      for (float v : cb.code(k)) n += v * v;
      CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("reset_inactive_codes") {
  Rng rng(4);
  auto cb = Codebook::random(4, 3, rng);
  auto donors = random_unit_rows(5, 3, rng);
  SUBCASE("all active") {
    cb.usage = {1, 2, 3, 4};
    const auto before = cb.codes;
    CHECK(reset_inactive_codes(cb, donors, 0, rng) == 0);
    CHECK(cb.codes == before);
    CHECK(cb.usage == std::vector<std::int64_t>{0, 0, 0, 0});
  }
  SUBCASE("one dead code takes a donor row") {
    cb.usage = {1, 0, 3, 4};
    CHECK(reset_inactive_codes(cb, donors, 0, rng) == 1);
    bool matched = false;
    for (int d = 0; d < 5; ++d) {
      bool same = true;
      for (int j = 0; j < 3; ++j) same = same && std::abs(cb.code(1)[j] - donors[d * 3 + j]) < 1e-6f;
      matched = matched || same;
    }
    CHECK(matched);
  }
  SUBCASE("no donors") {
    cb.usage = {0, 0, 0, 0};
    const auto before = cb.codes;
    CHECK(reset_inactive_codes(cb, {}, 0, rng) == 0);
    CHECK(cb.codes == before);
  }
}

TEST_CASE("encoder and decoder contracts") {
  Rng rng(5);
  VqConfig c;  // ℓ=24, s=4 -> L=6
  c.hidden = 16;
  Tokenizer tok(c, rng);
  data::SinesOptions so;
  so.n = 3;
  auto ds = data::gen_sines(so);
  auto lat = tok.encode_windows(ds.windows, 3);
  CHECK(lat.size() == 3 * 6 * c.code_dim);
  for (std::size_t r = 0; r < 18; ++r) {
    double n = 0;
    for (std::size_t j = 0; j < c.code_dim; ++j) n += lat[r * c.code_dim + j] * lat[r * c.code_dim + j];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
  }
  CHECK(tok.encode_windows(ds.windows, 3) == lat);
  auto rec = tok.decode_latents(lat, 3);
  CHECK(rec.size() == 3 * 24 * 5);
  for (float v : rec) CHECK(std::isfinite(v));
  CHECK(tok.decode_latents(lat, 3) == rec);

  ad::Tape<float> tape(false);
  CHECK_THROWS_AS(tok.decode(tape, ad::Tensor<float>({1, 5, c.code_dim})), DimensionError);
  auto bad = ds.windows;
  bad[7] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(tok.encode_windows(bad, 3), DataError);
  VqConfig odd = c;
  odd.downsample = 5;
  CHECK_THROWS_AS(Tokenizer(odd, rng), ConfigError);
}

TEST_CASE("vq_loss") {
  Rng rng(6);
  ad::Tape<float> tape(false);
  auto x = testing::random_tensor<float>({2, 8, 2}, rng, 1.0, false);
  const std::size_t L = 4, dc = 3;
  auto h_vals = random_unit_rows(2 * L, dc, rng);
  ad::Tensor<float> h({2, L, dc}, h_vals);
  SUBCASE("perfect match is zero") {
    auto loss = vq_loss(tape, x, x, h, h.clone(), 0.7);
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("orthogonal codes cost lambda") {
    ad::Tensor<float> a({1, 2, 2}, {1, 0, 0, 1}), b({1, 2, 2}, {0, 1, 1, 0});
    auto xs = testing::random_tensor<float>({1, 8, 2}, rng, 1.0, false);
    CHECK(vq_loss(tape, xs, xs, a, b, 0.5).item() == doctest::Approx(0.5));
  }
  SUBCASE("matches direct evaluation") {
    auto xr = testing::random_tensor<float>({2, 8, 2}, rng, 1.0, false);
    auto ht = random_unit_rows(2 * L, dc, rng);
    ad::Tensor<float> htt({2, L, dc}, ht);
    double se = 0, cs = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) se += std::pow(double(x.data()[i]) - xr.data()[i], 2);
    for (std::size_t i = 0; i < h_vals.size(); ++i) cs += double(h_vals[i]) * ht[i];
    const double expected = se / x.numel() + 0.3 / L * (2 * L - cs) / 2;
    CHECK(vq_loss(tape, x, xr, h, htt, 0.3).item() == doctest::Approx(expected).epsilon(1e-6));
  }
  SUBCASE("stop-gradient keeps codes out of the graph") {
    ad::Tape<float> rec;
    auto hg = h.clone();
    hg.set_requires_grad(true);
    auto ht = ad::Tensor<float>({2, L, dc}, random_unit_rows(2 * L, dc, rng), true);
    auto loss = vq_loss(rec, x, x, hg, ht, 1.0);
    rec.backward(loss);
    CHECK(ht.has_grad() == false);
    CHECK(hg.has_grad());
  }
}

TEST_CASE("train_vqvae smoke and determinism") {
  data::SinesOptions so;
  so.n = 8;
  so.seq_len = 8;
  so.features = 2;
  auto ds = data::gen_sines(so);
  VqTrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 4;
  opts.seed = 11;
  std::vector<std::size_t> epochs;
  auto a = train_vqvae(ds, tiny_config(), opts, [&](const VqEpochLog& e) { epochs.push_back(e.epoch); });
  CHECK(epochs == std::vector<std::size_t>{0, 1});
  auto b = train_vqvae(ds, tiny_config(), opts);
  data::Checkpoint ca, cb;
  a.tokenizer.save(ca);
  b.tokenizer.save(cb);
  CHECK(data::serialize_checkpoint(ca) == data::serialize_checkpoint(cb));

  testing::TempDir dir;
  data::save_checkpoint(dir.file("vq.ckpt"), ca);
  auto loaded = Tokenizer::load(data::load_checkpoint(dir.file("vq.ckpt")));
  CHECK(loaded.tokenize(ds.windows, 8) == a.tokenizer.tokenize(ds.windows, 8));
  CHECK(loaded.encode_windows(ds.windows, 8) == a.tokenizer.encode_windows(ds.windows, 8));

  VqConfig wrong = tiny_config();
  wrong.features = 3;
  CHECK_THROWS_AS(train_vqvae(ds, wrong, opts), ConfigError);
}
