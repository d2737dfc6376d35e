// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "sdflow/common/error.hpp"
#include "sdflow/data/checkpoint.hpp"
#include "sdflow/data/config.hpp"
#include "sdflow/data/dataset.hpp"
#include "support/tempdir.hpp"

using namespace sdflow;
using namespace sdflow::data;

TEST_CASE("gen_sines") {
  SinesOptions o;
  o.n = 50;
  o.seed = 4;
  auto ds = gen_sines(o);
  CHECK(ds.size() == 50);
  for (float v : ds.windows) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  CHECK(gen_sines(o).windows == ds.windows);
  o.seed = 5;
  CHECK(gen_sines(o).windows != ds.windows);

  SUBCASE("debug period") {
    SinesOptions d;
    d.n = 1;
    d.seq_len = 24;
    d.features = 2;
    d.debug_period = true;
    auto p = gen_sines(d);
    // One period: the value at t = seq_len would repeat t = 0.
    const double next = 0.5 * (std::sin(2.0 * M_PI * 24.0 / 24.0) + 1.0);
    CHECK(p.windows[0] == doctest::Approx(next).epsilon(1e-6));
    CHECK(p.windows[6 * 2] == doctest::Approx(1.0));  // quarter period peak
  }
  CHECK_THROWS_AS(gen_sines(SinesOptions{0}), ParameterError);
}

TEST_CASE("split") {
  SinesOptions o;
  o.n = 100;
  auto ds = gen_sines(o);
  split(ds, 0.2, 9);
  CHECK(ds.count(Split::kTrain) == 80);
  CHECK(ds.count(Split::kHeldout) == 20);
  auto tr = ds.indices(Split::kTrain), ho = ds.indices(Split::kHeldout);
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (auto i : ho) CHECK(all.insert(i).second);
  CHECK(all.size() == 100);
  auto again = gen_sines(o);
  split(again, 0.2, 9);
  CHECK(again.split == ds.split);
  for (double f : {0.013, 0.37, 0.5, 0.91}) {
    split(again, f, 3);
    CHECK(std::abs(static_cast<double>(again.count(Split::kHeldout)) - f * 100) <= 1.0);
  }
  CHECK_THROWS_AS(split(again, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(split(again, 0.001, 1), ConfigError);
}

TEST_CASE("load_csv_windows") {
  testing::TempDir dir;
  const auto path = dir.file("series.csv");
  {
    std::ofstream out(path);
    out << "a,b,const\n";
    for (int r = 0; r < 100; ++r) out << std::sin(0.3 * r) * 5 << "," << r * 0.5 - 7 << ",3\n";
  }
  CsvOptions opts;
  opts.seq_len = 24;
  opts.seed = 2;
  auto ds = load_csv_windows(path, opts);
  CHECK(ds.size() == 77);
  CHECK(ds.size() == window_count(100, 24, 1));
  CHECK(window_count(100, 24, 5) == 16);
  for (float v : ds.windows) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // Constant column normalizes to zero.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t t = 0; t < 24; ++t) CHECK(ds.window(i)[t * 3 + 2] == 0.0f);
  }
  // Stats come from train windows only.
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.split[i] != Split::kTrain) continue;
    for (std::size_t t = 0; t < 24; ++t) {
      const double v = (i + t) * 0.5 - 7;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  CHECK(ds.feature_min[1] == lo);
  CHECK(ds.feature_max[1] == hi);
  auto again = load_csv_windows(path, opts);
  CHECK(again.split == ds.split);
  CHECK(again.windows == ds.windows);

  SUBCASE("errors") {
    const auto bad = dir.file("bad.csv");
    {
      std::ofstream out(bad);
      out << "x,y\n1,2\n3,oops\n";
    }
    try {
      load_csv_windows(bad, opts);
      FAIL("expected parse error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("row 3") != std::string::npos);
      CHECK(std::string(e.what()).find("column 2") != std::string::npos);
    }
    const auto shrt = dir.file("short.csv");
    {
      std::ofstream out(shrt);
      out << "x\n1\n2\n";
    }
    CHECK_THROWS_AS(load_csv_windows(shrt, opts), DataError);
  }
}

TEST_CASE("windows csv round trip") {
  testing::TempDir dir;
  SinesOptions o;
  o.n = 3;
  auto ds = gen_sines(o);
  write_windows_csv(dir.file("w.csv"), ds);
  auto back = read_windows_csv(dir.file("w.csv"), 24);
  CHECK(back.windows == ds.windows);
}

TEST_CASE("key value config") {
  auto cfg = KeyValueConfig::parse("# comment\nalpha = 0.5\n name=sines  # trailing\nflag=true\n");
  CHECK(cfg.get_double("alpha", 0) == 0.5);
  CHECK(cfg.get("name") == "sines");
  CHECK(cfg.get_bool("flag", false));
  CHECK(cfg.get_int("missing", 7) == 7);
  CHECK_THROWS_AS(cfg.get_int("name", 0), ConfigError);
  CHECK_THROWS_AS(KeyValueConfig::parse("novalue\n"), ConfigError);
  CHECK(KeyValueConfig::parse(cfg.to_text()) == cfg);
  cfg.set_default("alpha", "9");
  CHECK(cfg.get_double("alpha", 0) == 0.5);
  cfg.set("alpha", "2");
  CHECK(cfg.origin("alpha") == KeyValueConfig::Origin::kFlag);
  CHECK(format_double(0.1) == "0.1");
}

TEST_CASE("checkpoint") {
  testing::TempDir dir;
  Checkpoint ck;
  ck.config.set("K", "64");
  ck.config.set("name", "x y");
  ck.add("w", {2, 3}, {1.5f, -0.0f, 3e-38f, 1e30f, 7.25f, -2.0f});
  ck.add("b", {1}, {0.125f});
  const auto p1 = dir.file("a.ckpt"), p2 = dir.file("b.ckpt");
  save_checkpoint(p1, ck);
  auto back = load_checkpoint(p1);
  CHECK(back.config == ck.config);
  REQUIRE(back.arrays.size() == 2);
  CHECK(back.get("w").shape == ad::Shape{2, 3});
  CHECK(std::memcmp(back.get("w").values.data(), ck.get("w").values.data(), 6 * sizeof(float)) == 0);
  save_checkpoint(p2, back);
  CHECK(read_file(p1) == read_file(p2));

  SUBCASE("corruption") {
    std::string bytes = read_file(p1);
    const auto pos = bytes.find("array w");
    std::string flipped = bytes;
    flipped[pos + 20] ^= 0x01;
    CHECK_THROWS_AS(parse_checkpoint(flipped), LoadError);
    CHECK_THROWS_AS(parse_checkpoint(bytes.substr(0, bytes.size() - 10)), LoadError);
    CHECK_THROWS_AS(parse_checkpoint("NOT-A-CKPT\n" + bytes), LoadError);
    std::string v2 = bytes;
    v2.replace(v2.find("version 1"), 9, "version 9");
    try {
      parse_checkpoint(v2);
      FAIL("expected version error");
    } catch (const LoadError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), LoadError);
  }
  CHECK_THROWS_AS(ck.add("w", {1}, {0.0f}), ParameterError);
  CHECK_THROWS_AS(ck.get("nope"), LoadError);
}
