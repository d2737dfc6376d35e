// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite A1-A14 plus desk checks D1-D2. Prints one PASS/FAIL line
// per criterion and exits non-zero if any selected criterion fails.

#include <CLI11.hpp>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sdflow/common/log.hpp"
#include "sdflow/common/parallel.hpp"
#include "sdflow/data/checkpoint.hpp"
#include "sdflow/geometry/lab.hpp"
#include "sdflow/pipeline/pipeline.hpp"
#include "support/gradcheck.hpp"

using namespace sdflow;
namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// Desk-scale Sines pipeline shared by the Stage-2 criteria.
class Desk {
 public:
  Desk(std::size_t seeds, fs::path work) : seeds_(seeds), work_(std::move(work)) {}

  const data::KeyValueConfig& config() const { return cfg_; }
  const data::WindowedDataset& train() { load(); return train_; }
  const data::WindowedDataset& heldout() { load(); return held_; }

  const vq::Tokenizer& tokenizer() {
    if (!tok_) {
      load();
      const auto path = work_ / "desk_stage1.ckpt";
      auto vc = vq::VqConfig::from_config(cfg_);
      tok_ = vq::train_vqvae(train_, vc, pipeline::vq_train_options(cfg_)).tokenizer;
      data::Checkpoint c;
      tok_->save(c);
      data::save_checkpoint(path.string(), c);
    }
    return *tok_;
  }

  flow::FlowConfig flow_config(flow::PriorKind prior) {
    auto c = cfg_;
    const auto& vc = tokenizer().config();
    c.set("flow.codebook_size", std::to_string(vc.codebook_size));
    c.set("flow.code_dim", std::to_string(vc.code_dim));
    c.set("flow.latent_len", std::to_string(vc.latent_len()));
    auto fc = flow::FlowConfig::from_config(c);
    fc.prior = prior;
    return fc;
  }

  flow::FlowTrainOptions train_options(std::uint64_t seed) const {
    auto o = pipeline::flow_train_options(cfg_);
    o.seed = seed;
    return o;
  }

  std::vector<float> generate(const flow::FlowModel& m, std::uint64_t seed, std::optional<std::size_t> steps) {
    flow::GenerateOptions g;
    g.n = heldout().size();
    g.seed = pipeline::generation_seed(seed);
    g.steps = steps;
    return flow::euler_generate(m, tokenizer(), g).windows;
  }

  pipeline::Score score(const std::vector<float>& windows, std::uint64_t seed) {
    return pipeline::score(tokenizer(), heldout(), windows, heldout().size(), seed, pipeline::conv_options(cfg_));
  }

  struct SeedRun {
    std::uint64_t seed = 0;
    flow::FlowModel anchored, gaussian;
    std::vector<float> flow_windows;
    pipeline::Score flow, gauss, kde;
  };

  // Prior ablation runs, one per seed, trained on first use.
  const std::vector<SeedRun>& prior_runs() {
    if (runs_.empty()) {
      for (std::size_t s = 1; s <= seeds_; ++s) {
        SeedRun r;
        r.seed = s;
        const auto o = train_options(s);
        r.anchored = pipeline::train_stage2(tokenizer(), train(), flow_config(flow::PriorKind::kAnchored), o);
        r.gaussian = pipeline::train_stage2(tokenizer(), train(), flow_config(flow::PriorKind::kGaussian), o);
        r.flow_windows = generate(r.anchored, s, std::nullopt);
        r.flow = score(r.flow_windows, s);
        r.gauss = score(generate(r.gaussian, s, std::nullopt), s);
        r.kde = score(flow::kde_only_generate(r.anchored, tokenizer(), heldout().size(), pipeline::generation_seed(s))
                          .windows,
                      s);
        std::printf("   seed %zu: DS anchored %.4f gaussian %.4f kde_only %.4f\n", s, r.flow.ds, r.gauss.ds,
                    r.kde.ds);
        std::fflush(stdout);
        runs_.push_back(std::move(r));
      }
    }
    return runs_;
  }

 private:
  void load() {
    if (train_.size() == 0) {
      const auto ds = pipeline::load_dataset(cfg_);
      train_ = ds.subset(data::Split::kTrain);
      held_ = ds.subset(data::Split::kHeldout);
    }
  }

  std::size_t seeds_;
  fs::path work_;
  data::KeyValueConfig cfg_ = pipeline::default_config();
  data::WindowedDataset train_, held_;
  std::optional<vq::Tokenizer> tok_;
  std::vector<SeedRun> runs_;
};

// ---- criteria ---------------------------------------------------------------

Outcome a1_tokenizer(Desk& desk) {
  vq::VqConfig vc;
  vc.codebook_size = 64;
  vc.code_dim = 64;
  vc.downsample = 4;
  vq::VqTrainOptions o;
  o.epochs = 200;
  o.seed = 1;
  const auto tok = vq::train_vqvae(desk.train(), vc, o).tokenizer;
  const auto tr = vq::evaluate_reconstruction(tok, desk.train());
  const auto ho = vq::evaluate_reconstruction(tok, desk.heldout());
  return {ho.mse < 0.05 && tr.utilization > 0.5,
          "held-out MSE " + num(ho.mse) + " (train " + num(tr.mse) + "), utilization " + num(tr.utilization) +
              " on " + std::to_string(desk.train().size()) + " windows"};
}

Outcome a2_gradients() {
  std::size_t checks = 0, failures = 0;
  double worst_f = 0.0, worst_d = 0.0;
  auto tally = [&](const auto& results, double tol, double& worst) {
    for (const auto& r : results) {
      ++checks;
      worst = std::max(worst, r.rel_error);
      if (!r.finite || !(r.rel_error < tol)) {
        ++failures;
        std::printf("   gradcheck %s rel err %.3e\n", r.name.c_str(), r.rel_error);
      }
    }
  };
  tally(testing::primitive_gradchecks<float>(23), 1e-3, worst_f);
  tally(testing::composite_gradchecks<float>(29), 1e-3, worst_f);
  tally(testing::primitive_gradchecks<double>(17), 1e-6, worst_d);
  tally(testing::composite_gradchecks<double>(19), 1e-6, worst_d);
  return {failures == 0, std::to_string(checks - failures) + "/" + std::to_string(checks) +
                             " checks; worst rel err float " + num(worst_f, 3) + ", double " + num(worst_d, 3)};
}

Outcome a3_gaussian_transport() {
  bool ok = true;
  std::string detail;
  const std::pair<std::size_t, double> cases[] = {{256, 0.0}, {512, 1.0}};
  for (const auto& [D, C] : cases) {
    const auto e = geometry::transport_gaussian(
        D,
        [C = C](Rng& rng, std::span<double> z) {
          std::fill(z.begin(), z.end(), 0.0);
          if (C > 0.0) z[rng.index(z.size())] = rng.uniform() < 0.5 ? -1.0 : 1.0;
        },
        100000, D);
    const double target = static_cast<double>(D) + C;
    const double z = (e.mean - target) / e.std_err;
    ok = ok && std::abs(z) <= 3.0;
    detail += (detail.empty() ? "" : "; ") + std::string("D=") + std::to_string(D) + " C=" + num(C) + ": " +
              num(e.mean, 6) + " vs " + num(target, 6) + " (" + num(z, 2) + " SE)";
  }
  return {ok, detail};
}

Outcome a4_anchored_transport() {
  geometry::TransportExperiment ex;
  ex.r = 8;
  ex.h = 0.1;
  ex.epsilon = 0.05;
  ex.n_trials = 100000;
  bool bounded = true;
  std::vector<double> est;
  std::string detail;
  for (std::size_t D : {128, 512, 2048}) {
    ex.D = D;
    const auto a = geometry::transport_anchored(ex, D);
    bounded = bounded && a.estimate.mean <= a.bound + 3.0 * a.estimate.std_err;
    est.push_back(a.estimate.mean);
    detail += (detail.empty() ? "" : "; ") + std::string("D=") + std::to_string(D) + ": " + num(a.estimate.mean) +
              " <= " + num(a.bound);
  }
  double spread = 0.0;
  for (double a : est) {
    for (double b : est) spread = std::max(spread, std::abs(a - b) / std::min(a, b));
  }
  return {bounded && spread < 0.1, detail + "; max pairwise gap " + num(100.0 * spread, 3) + "%"};
}

Outcome a5_pinsker() {
  Rng rng(51);
  std::size_t pinsker_fail = 0;
  for (int i = 0; i < 100000; ++i) pinsker_fail += !geometry::pinsker_check(geometry::random_bound_instance(rng)).holds;
  std::vector<geometry::BoundInstance> inst;
  for (int i = 0; i < 10000; ++i) inst.push_back(geometry::random_bound_instance(rng));
  const auto v = geometry::velocity_bound_check(inst);
  return {pinsker_fail == 0 && v.violations == 0 && v.holds,
          "Pinsker failures " + std::to_string(pinsker_fail) + "/100000; velocity-bound violations " +
              std::to_string(v.violations) + "/10000 (mean " + num(v.velocity_mse) + " <= " + num(v.bound) + ")"};
}

Outcome a6_euler(Desk& desk) {
  // A one-epoch flow whose head always predicts one code: the posterior mean
  // is then constant and Euler must land on it exactly.
  vq::VqConfig vc;
  vc.codebook_size = 16;
  vc.code_dim = 8;
  vc.hidden = 16;
  Rng init(6);
  const vq::Tokenizer tok(vc, init);
  flow::FlowConfig fc;
  fc.inherit(vc);
  fc.d_model = 16;
  fc.heads = 2;
  fc.rank = 4;
  auto o = desk.train_options(1);
  o.epochs = 1;
  std::vector<std::size_t> rows(64);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  auto model = flow::train_flow(tok, desk.train().subset(rows), fc, o).model;
  const std::size_t k = 7;
  const auto params = model.net.parameters();
  for (auto [name, t] : params.entries()) {
    if (name == "flow.head.weight") std::fill(t.data().begin(), t.data().end(), 0.0f);
    if (name == "flow.head.bias") {
      std::fill(t.data().begin(), t.data().end(), 0.0f);
      t.data()[k] = 60.0f;
    }
  }
  const auto target = tok.codebook().code(k);
  Rng rng(6);
  double worst = 0.0;
  for (std::size_t S : {5u, 20u, 50u}) {
    for (int start = 0; start < 100; ++start) {
      std::vector<double> z(model.config.dim());
      for (auto& v : z) v = rng.normal(0.0, 2.0);
      flow::integrate(model, tok.codebook(), z, S, 1.0);
      for (std::size_t i = 0; i < z.size(); ++i) {
        worst = std::max(worst, std::abs(z[i] - static_cast<double>(target[i % model.config.code_dim])));
      }
    }
  }
  return {worst < 1e-5, "max |z_1 - target| " + num(worst, 3) + " over 300 trajectories"};
}

Outcome a7_kde_rate() {
  bool ok = true;
  std::string detail;
  for (std::size_t r : {1, 2}) {
    std::vector<double> slopes;
    double expected = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      geometry::KdeRateOptions o;
      o.r = r;
      const auto k = geometry::kde_rate_experiment(o, seed);
      slopes.push_back(k.slope);
      expected = k.expected_slope;
      ok = ok && std::abs(k.slope - k.expected_slope) <= 0.25;
    }
    const auto [lo, hi] = std::minmax_element(slopes.begin(), slopes.end());
    detail += (detail.empty() ? "" : "; ") + std::string("r=") + std::to_string(r) + ": slopes [" + num(*lo, 3) +
              ", " + num(*hi, 3) + "] vs " + num(expected, 3);
  }
  return {ok, detail};
}

Outcome a8_prior(Desk& desk) {
  std::size_t wins = 0;
  std::vector<double> a, g;
  for (const auto& r : desk.prior_runs()) {
    wins += r.flow.ds < r.gauss.ds;
    a.push_back(r.flow.ds);
    g.push_back(r.gauss.ds);
  }
  return {wins >= 4, "anchored < gaussian in " + std::to_string(wins) + "/" + std::to_string(a.size()) +
                         " seeds (mean DS " + num(mean(a)) + " vs " + num(mean(g)) + ")"};
}

Outcome a9_kde_only(Desk& desk) {
  std::size_t wins = 0;
  std::vector<double> f, k;
  for (const auto& r : desk.prior_runs()) {
    wins += r.kde.ds > r.flow.ds;
    f.push_back(r.flow.ds);
    k.push_back(r.kde.ds);
  }
  return {wins >= 4, "kde_only > flow in " + std::to_string(wins) + "/" + std::to_string(f.size()) +
                         " seeds (mean DS " + num(mean(k)) + " vs " + num(mean(f)) + ")"};
}

Outcome a10_steps(Desk& desk) {
  std::vector<double> s10, s20, s50;
  for (const auto& r : desk.prior_runs()) {
    s20.push_back(r.flow.ds);
    s10.push_back(desk.score(desk.generate(r.anchored, r.seed, 10), r.seed).ds);
    s50.push_back(desk.score(desk.generate(r.anchored, r.seed, 50), r.seed).ds);
  }
  const double m10 = mean(s10), m20 = mean(s20), m50 = mean(s50);
  return {m20 <= m10 + 0.02 && std::abs(m20 - m50) <= 0.02,
          "mean DS S=10 " + num(m10) + ", S=20 " + num(m20) + ", S=50 " + num(m50)};
}

Outcome a11_memorization(Desk& desk) {
  const auto& r = desk.prior_runs().front();
  const eval::WindowSet gen{r.flow_windows, desk.heldout().size(), desk.heldout().seq_len, desk.heldout().features};
  const auto audit = eval::nn_audit(eval::WindowSet::of(desk.train()), gen, eval::WindowSet::of(desk.heldout()));
  const double gap = std::abs(audit.generated_nn.mean - audit.heldout_nn.mean) / audit.heldout_nn.mean;
  return {audit.copy_rate < 0.05 && gap <= 0.25,
          "copy rate " + num(audit.copy_rate) + " (held-out " + num(audit.heldout_copy_rate) +
              "); NN distance generated " + num(audit.generated_nn.mean) + " vs held-out " +
              num(audit.heldout_nn.mean) + " (" + num(100.0 * gap, 3) + "% apart)"};
}

Outcome a12_heldout_fraction(Desk& desk) {
  std::vector<double> full, tenth;
  for (const auto& r : desk.prior_runs()) {
    full.push_back(r.flow.ds);
    const auto m = pipeline::train_stage2(desk.tokenizer(), desk.train(),
                                          desk.flow_config(flow::PriorKind::kAnchored), desk.train_options(r.seed), 0.1);
    tenth.push_back(desk.score(desk.generate(m, r.seed, std::nullopt), r.seed).ds);
    std::printf("   seed %llu: DS fraction 0.1 %.4f\n", static_cast<unsigned long long>(r.seed), tenth.back());
    std::fflush(stdout);
  }
  const double gap = std::abs(mean(tenth) - mean(full));
  return {gap <= 0.05, "mean DS fraction 0.1 " + num(mean(tenth)) + " vs 1.0 " + num(mean(full)) + " (gap " +
                           num(gap, 3) + ")"};
}

Outcome a13_determinism(Desk& desk) {
  auto cfg = desk.config();
  auto vo = pipeline::vq_train_options(cfg);
  vo.epochs = 2;
  const auto vc = vq::VqConfig::from_config(cfg);
  auto stage1 = [&] {
    data::Checkpoint c;
    vq::train_vqvae(desk.train(), vc, vo).tokenizer.save(c);
    return data::serialize_checkpoint(c);
  };
  const auto s1a = stage1(), s1b = stage1();
  const auto tok = vq::Tokenizer::load(data::parse_checkpoint(s1a));

  auto fc = desk.flow_config(flow::PriorKind::kAnchored);
  auto fo = desk.train_options(3);
  fo.epochs = 1;
  auto stage2 = [&] {
    return data::serialize_checkpoint(flow::make_stage2_checkpoint(tok, flow::train_flow(tok, desk.train(), fc, fo).model));
  };
  const auto s2a = stage2();
  data::Checkpoint after;
  tok.save(after);
  const bool frozen = data::serialize_checkpoint(after) == s1a;
  const auto s2b = stage2();

  set_thread_count(1);
  const auto s2_one_thread = stage2();
  set_thread_count(static_cast<int>(std::max(2u, std::thread::hardware_concurrency())));
  const auto s2_many_threads = stage2();
  set_thread_count(static_cast<int>(std::max(1u, std::thread::hardware_concurrency())));

  const auto path = fs::temp_directory_path() / "sdflow_acceptance_a13.ckpt";
  data::write_file(path.string(), s2a);
  const auto loaded = data::load_checkpoint(path.string());
  const bool file_trip = data::serialize_checkpoint(loaded) == s2a;
  const bool model_trip = data::serialize_checkpoint(flow::make_stage2_checkpoint(
                              vq::Tokenizer::load(loaded), flow::FlowModel::load(loaded))) == s2a;
  fs::remove(path);

  const bool stage1_same = s1a == s1b, stage2_same = s2a == s2b, threads_same = s2_one_thread == s2_many_threads;
  auto yn = [](bool b) { return b ? "yes" : "no"; };
  return {stage1_same && stage2_same && threads_same && file_trip && model_trip && frozen,
          std::string("rerun identical stage1 ") + yn(stage1_same) + ", stage2 " + yn(stage2_same) +
              "; thread-count invariant " + yn(threads_same) + "; round trip file " + yn(file_trip) + ", model " +
              yn(model_trip) + "; stage1 frozen " + yn(frozen)};
}

Outcome a14_spectrum(Desk& desk) {
  const auto& r = desk.prior_runs().front();
  const std::vector<double> t0{0.0};
  const auto a = geometry::spectrum_along_flow(r.anchored, desk.tokenizer(), 500, t0, 20, 0.9, 14);
  const auto g = geometry::spectrum_along_flow(r.gaussian, desk.tokenizer(), 500, t0, 20, 0.9, 14);
  const auto ea = a.reports[0].effective_rank, eg = g.reports[0].effective_rank;
  return {ea > 0 && eg >= 3 * ea, "effective rank(0.9) at t=0: gaussian " + std::to_string(eg) + ", anchored " +
                                      std::to_string(ea) + " (rank r=" + std::to_string(r.anchored.config.rank) +
                                      ")"};
}

// Stage-2 coordinates after desk training: ||ū|| < 0.1, global std in [0.8, 1.2].
Outcome d1_coordinates(Desk& desk) {
  bool ok = true;
  std::string detail;
  for (const auto& r : desk.prior_runs()) {
    const auto& sc = r.anchored.scaffold;
    const auto st = manifold::coord_stats(sc.U.data(), sc.M, sc.r);
    ok = ok && st.mean_norm < 0.1 && st.global_std >= 0.8 && st.global_std <= 1.2;
    detail += (detail.empty() ? "" : "; ") + std::string("seed ") + std::to_string(r.seed) + ": |mean| " +
              num(st.mean_norm, 3) + ", std " + num(st.global_std, 3);
  }
  return {ok, detail};
}

// 12 -> 12 forecasts on 100 held-out windows against repeating the last observed row.
Outcome d2_forecast(Desk& desk) {
  const auto& r = desk.prior_runs().front();
  const auto& held = desk.heldout();
  const std::size_t n = std::min<std::size_t>(100, held.size());
  const std::size_t T = held.seq_len, F = held.features, half = T / 2, w = T * F;
  std::vector<float> hist(n * half * F);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(held.windows.begin() + static_cast<std::ptrdiff_t>(i * w), half * F,
                hist.begin() + static_cast<std::ptrdiff_t>(i * half * F));
  }
  flow::ForecastOptions fo;
  fo.seed = pipeline::generation_seed(r.seed);
  const auto out = flow::forecast(r.anchored, desk.tokenizer(), hist, n, fo);
  double mae = 0.0, naive = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const float* truth = held.windows.data() + i * w;
    const float* pred = out.data() + i * w;
    for (std::size_t t = half; t < T; ++t) {
      for (std::size_t f = 0; f < F; ++f) {
        mae += std::abs(pred[t * F + f] - truth[t * F + f]);
        naive += std::abs(truth[(half - 1) * F + f] - truth[t * F + f]);
      }
    }
  }
  const double cells = static_cast<double>(n * (T - half) * F);
  mae /= cells;
  naive /= cells;
  return {mae < naive, "MAE " + num(mae) + " vs repeat-last " + num(naive) + " on " + std::to_string(n) +
                           " windows (" + std::to_string(half) + " -> " + std::to_string(T - half) + ")"};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale acceptance suite"};
  std::vector<std::string> only;
  std::string work = (fs::temp_directory_path() / "sdflow_acceptance").string();
  std::size_t seeds = 5;
  int threads = 0;
  app.add_option("--only", only, "Run only these criteria (e.g. A3 A7)")->delimiter(',');
  app.add_option("--work", work, "Directory for checkpoints and the report");
  app.add_option("--seeds", seeds, "Seeds for the multi-seed criteria")->check(CLI::PositiveNumber);
  app.add_option("--threads", threads, "Worker threads (default: SDFLOW_THREADS or all cores)");
  CLI11_PARSE(app, argc, argv);

  if (threads <= 0) {
    const char* env = std::getenv("SDFLOW_THREADS");
    threads = env ? std::atoi(env) : static_cast<int>(std::thread::hardware_concurrency());
  }
  set_thread_count(std::max(1, threads));
  log::set_level(log::Level::kWarn);
  fs::create_directories(work);

  Desk desk(seeds, work);
  struct Criterion {
    const char* id;
    const char* budget;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {"A1", "5 min", [&] { return a1_tokenizer(desk); }},
      {"A2", "1 min", [] { return a2_gradients(); }},
      {"A3", "1 min", [] { return a3_gaussian_transport(); }},
      {"A4", "2 min", [] { return a4_anchored_transport(); }},
      {"A5", "2 min", [] { return a5_pinsker(); }},
      {"A6", "10 s", [&] { return a6_euler(desk); }},
      {"A7", "3 min", [] { return a7_kde_rate(); }},
      {"A8", "20 min", [&] { return a8_prior(desk); }},
      {"A9", "shares A8", [&] { return a9_kde_only(desk); }},
      {"A10", "", [&] { return a10_steps(desk); }},
      {"A11", "", [&] { return a11_memorization(desk); }},
      {"A12", "", [&] { return a12_heldout_fraction(desk); }},
      {"A13", "", [&] { return a13_determinism(desk); }},
      {"A14", "", [&] { return a14_spectrum(desk); }},
      {"D1", "", [&] { return d1_coordinates(desk); }},
      {"D2", "", [&] { return d2_forecast(desk); }},
  };

  std::printf("acceptance: %d thread(s), %zu seed(s), code %s\n", thread_count(), seeds, SDFLOW_GIT_HASH);
  std::fflush(stdout);
  Json report;
  std::size_t failed = 0;
  const auto suite_start = std::chrono::steady_clock::now();
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failed += !o.pass;
    std::printf("%-4s %s  %s  [%.1f s%s%s]\n", c.id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                *c.budget ? ", target " : "", c.budget);
    std::fflush(stdout);
    report[c.id] = {{"pass", o.pass}, {"detail", o.detail}, {"seconds", secs}};
  }
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - suite_start).count();
  std::printf("acceptance: %zu failed, total %.1f s\n", failed, total);
  report["total_seconds"] = total;
  data::write_file((fs::path(work) / "acceptance_report.json").string(), report.dump(2) + "\n");
  return failed == 0 ? 0 : 1;
}
