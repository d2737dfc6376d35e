// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/pipeline/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <json.hpp>
#include <numeric>
#include <sstream>

#include "sdflow/common/error.hpp"
#include "sdflow/common/log.hpp"
#include "sdflow/data/checkpoint.hpp"
#include "sdflow/geometry/lab.hpp"

namespace sdflow::pipeline {

namespace fs = std::filesystem;
using data::KeyValueConfig;
using data::WindowedDataset;

namespace {

std::string fmt(double v) { return data::format_double(v); }

std::size_t get_size(const KeyValueConfig& cfg, const std::string& key, std::size_t fallback) {
  const auto v = cfg.get_int(key, static_cast<long long>(fallback));
  if (v < 0) throw ConfigError(key + " must be non-negative");
  return static_cast<std::size_t>(v);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(what + ": '" + s + "' is not a number");
  }
}

WindowedDataset as_dataset(std::vector<float> windows, std::size_t n, std::size_t seq_len, std::size_t features,
                           const std::string& source) {
  WindowedDataset ds;
  ds.seq_len = seq_len;
  ds.features = features;
  ds.windows = std::move(windows);
  ds.split.assign(n, data::Split::kTrain);
  ds.feature_min.assign(features, 0.0);
  ds.feature_max.assign(features, 1.0);
  ds.source = source;
  return ds;
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

fs::path write_output(const Run& run, CommandResult& res, const std::string& name, const std::string& bytes) {
  const fs::path p = run.out / name;
  data::write_file(p.string(), bytes);
  res.outputs.push_back(p);
  return p;
}

fs::path save_output_checkpoint(const Run& run, CommandResult& res, const std::string& name,
                                const data::Checkpoint& ckpt) {
  const fs::path p = run.out / name;
  data::save_checkpoint(p.string(), ckpt);
  res.outputs.push_back(p);
  return p;
}

struct Stage2 {
  vq::Tokenizer tok;
  flow::FlowModel model;
};

Stage2 load_stage2(const std::string& path) {
  const auto ckpt = data::load_checkpoint(path);
  Stage2 s{vq::Tokenizer::load(ckpt), flow::FlowModel::load(ckpt)};
  flow::check_compatible(s.tok.config(), s.model.config);
  return s;
}

// Flow config from `cfg` with K, d_c and L taken from the tokenizer unless
// set explicitly, in which case they must agree.
flow::FlowConfig flow_config_for(const KeyValueConfig& cfg, const vq::VqConfig& vq) {
  KeyValueConfig c = cfg;
  if (!c.has("flow.codebook_size")) c.set("flow.codebook_size", std::to_string(vq.codebook_size));
  if (!c.has("flow.code_dim")) c.set("flow.code_dim", std::to_string(vq.code_dim));
  if (!c.has("flow.latent_len")) c.set("flow.latent_len", std::to_string(vq.latent_len()));
  auto fc = flow::FlowConfig::from_config(c);
  flow::check_compatible(vq, fc);
  return fc;
}

std::string now_utc() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::string summary_json(const CheckList& checks, nlohmann::ordered_json extra = {}) {
  nlohmann::ordered_json j;
  j["code_version"] = SDFLOW_GIT_HASH;
  for (const auto& [name, ok] : checks.items) j["checks"][name] = ok;
  j["pass"] = checks.all_pass();
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j.dump(2) + "\n";
}

}  // namespace

// ---- run bookkeeping ----------------------------------------------------------

data::KeyValueConfig default_config() {
  KeyValueConfig c;
  auto d = [&](const std::string& k, const std::string& v) { c.set(k, v, KeyValueConfig::Origin::kDefault); };
  d("seed", "1");
  d("data.source", "sines");
  d("data.n", "2500");
  d("data.seq_len", "24");
  d("data.features", "5");
  d("data.stride", "1");
  d("data.heldout_fraction", "0.2");
  d("data.seed", "1");

  vq::VqConfig vc;
  vc.codebook_size = 512;
  vc.downsample = 2;
  KeyValueConfig vqc;
  vc.to_config(vqc);
  for (const auto& [k, v] : vqc.values()) d(k, v);
  d("train.vq_epochs", "40");
  d("train.vq_batch", "64");
  d("train.vq_lr", "0.001");

  flow::FlowConfig fc;
  fc.d_model = 256;
  fc.heads = 8;
  fc.rank = 64;
  KeyValueConfig fcc;
  fc.to_config(fcc);
  for (const auto& [k, v] : fcc.values()) {
    // Inherited from the tokenizer at train time.
    if (k == "flow.codebook_size" || k == "flow.code_dim" || k == "flow.latent_len") continue;
    d(k, v);
  }
  d("train.flow_epochs", "40");
  d("train.flow_batch", "64");
  d("train.lr_theta", "0.001");
  d("train.lr_uv", "0.01");

  d("gen.n", "500");
  d("gen.mode", "flow");

  d("eval.hidden", "32");
  d("eval.kernel", "5");
  d("eval.epochs", "40");
  d("eval.batch", "64");
  d("eval.lr", "0.001");

  d("ablate.seeds", "5");
  d("ablate.n", "0");

  d("analyze.trials", "100000");
  d("analyze.instances", "100000");
  d("analyze.velocity_instances", "10000");
  d("analyze.rank", "8");
  d("analyze.h", "0.1");
  d("analyze.epsilon", "0.05");
  d("analyze.kde_seeds", "10");
  d("analyze.n", "500");
  d("analyze.steps", "21");
  d("analyze.threshold", "0.9");
  return c;
}

std::string config_hash(const KeyValueConfig& cfg) {
  const auto text = cfg.to_text();
  return data::hex32(data::crc32_of(text.data(), text.size()));
}

bool CheckList::all_pass() const { return failures() == 0; }

std::size_t CheckList::failures() const {
  return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [](const auto& i) { return !i.second; }));
}

Run start_run(const std::string& command, const KeyValueConfig& resolved, const fs::path& out) {
  if (out.empty()) throw ConfigError("an output directory is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  Run run;
  run.command = command;
  run.config = resolved;
  run.out = out;
  run.seed = resolved.get_uint("seed", 0);
  std::ostringstream m;
  m << "# command " << command << "\n";
  m << "# seed " << run.seed << "\n";
  m << "# code_version " << SDFLOW_GIT_HASH << "\n";
  m << "# config_hash " << config_hash(resolved) << "\n";
  m << "# started " << now_utc() << "\n";
  m << resolved.to_text();
  data::write_file((out / "manifest.txt").string(), m.str());
  log::info("run " + command + " -> " + out.string() + "\n" + resolved.describe());
  return run;
}

void finish_run(const Run& run, CommandResult& result) {
  std::ostringstream o;
  for (const auto& p : result.outputs) o << p.filename().string() << " " << data::hex32(data::file_crc32(p.string())) << "\n";
  data::write_file((run.out / "outputs.txt").string(), o.str());
  std::ostringstream c;
  for (const auto& [name, ok] : result.checks.items) c << (ok ? "PASS " : "FAIL ") << name << "\n";
  data::write_file((run.out / "checks.txt").string(), c.str());
}

// ---- config views -------------------------------------------------------------

WindowedDataset load_dataset(const KeyValueConfig& cfg) {
  const auto source = cfg.get_string("data.source", "sines");
  const double frac = cfg.get_double("data.heldout_fraction", 0.2);
  const auto seed = cfg.get_uint("data.seed", 1);
  WindowedDataset ds;
  if (source == "sines") {
    data::SinesOptions so;
    so.n = get_size(cfg, "data.n", 2500);
    so.seq_len = get_size(cfg, "data.seq_len", 24);
    so.features = get_size(cfg, "data.features", 5);
    so.seed = seed;
    ds = data::gen_sines(so);
    data::split(ds, frac, seed);
  } else if (source == "csv") {
    const auto path = cfg.get_string("data.path", "");
    if (path.empty()) throw ConfigError("data.source=csv needs data.path");
    data::CsvOptions co;
    co.seq_len = get_size(cfg, "data.seq_len", 24);
    co.stride = get_size(cfg, "data.stride", 1);
    co.heldout_fraction = frac;
    co.seed = seed;
    ds = data::load_csv_windows(path, co);
  } else {
    throw ConfigError("data.source must be sines or csv, got '" + source + "'");
  }
  return ds;
}

vq::VqTrainOptions vq_train_options(const KeyValueConfig& cfg) {
  vq::VqTrainOptions o;
  o.epochs = get_size(cfg, "train.vq_epochs", o.epochs);
  o.batch_size = get_size(cfg, "train.vq_batch", o.batch_size);
  o.lr = cfg.get_double("train.vq_lr", o.lr);
  o.seed = cfg.get_uint("seed", 0);
  return o;
}

flow::FlowTrainOptions flow_train_options(const KeyValueConfig& cfg) {
  flow::FlowTrainOptions o;
  o.epochs = get_size(cfg, "train.flow_epochs", o.epochs);
  o.batch_size = get_size(cfg, "train.flow_batch", o.batch_size);
  o.lr_theta = cfg.get_double("train.lr_theta", o.lr_theta);
  o.lr_uv = cfg.get_double("train.lr_uv", o.lr_uv);
  o.seed = cfg.get_uint("seed", 0);
  return o;
}

eval::ConvNetOptions conv_options(const KeyValueConfig& cfg) {
  eval::ConvNetOptions o;
  o.hidden = get_size(cfg, "eval.hidden", o.hidden);
  o.kernel = get_size(cfg, "eval.kernel", o.kernel);
  o.epochs = get_size(cfg, "eval.epochs", o.epochs);
  o.batch_size = get_size(cfg, "eval.batch", o.batch_size);
  o.lr = cfg.get_double("eval.lr", o.lr);
  return o;
}

// ---- Stage-2 building blocks ----------------------------------------------------

WindowedDataset anchor_subset(const WindowedDataset& train, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("anchor fraction must lie in (0, 1]");
  if (fraction == 1.0) return train;
  const auto keep = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train.size())));
  if (keep < 32) {
    throw ConfigError("anchor fraction " + fmt(fraction) + " keeps " + std::to_string(keep) +
                      " anchors; at least 32 are required");
  }
  std::vector<std::size_t> rows(train.size());
  std::iota(rows.begin(), rows.end(), 0);
  Rng rng = Rng(seed).derive(0xF2AC);
  std::shuffle(rows.begin(), rows.end(), rng.engine());
  rows.resize(keep);
  std::sort(rows.begin(), rows.end());
  return train.subset(rows);
}

flow::FlowModel train_stage2(const vq::Tokenizer& tok, const WindowedDataset& train, const flow::FlowConfig& config,
                             flow::FlowTrainOptions opts, double fraction) {
  const auto rows = anchor_subset(train, fraction, opts.seed);
  if (fraction < 1.0) {
    opts.epochs = static_cast<std::size_t>(std::ceil(static_cast<double>(opts.epochs) / fraction));
  }
  return flow::train_flow(tok, rows, config, opts).model;
}

Score score(const vq::Tokenizer& tok, const WindowedDataset& real, std::span<const float> synthetic, std::size_t n,
            std::uint64_t seed, const eval::ConvNetOptions& conv) {
  const auto rs = eval::WindowSet::of(real);
  const eval::WindowSet ss{synthetic, n, real.seq_len, real.features};
  Score s;
  s.ds = eval::discriminative_score(rs, ss, seed, conv).ds;
  s.lfd = eval::latent_frechet_distance(tok, rs, ss);
  return s;
}

std::uint64_t generation_seed(std::uint64_t run_seed) { return Rng(run_seed).derive(0x6E4).seed(); }

// ---- ablations ------------------------------------------------------------------

std::vector<double> AblationTable::ds_of(const std::string& setting) const {
  std::vector<const AblationCell*> c;
  for (const auto& cell : cells) {
    if (cell.setting == setting) c.push_back(&cell);
  }
  std::sort(c.begin(), c.end(), [](auto* a, auto* b) { return a->seed < b->seed; });
  std::vector<double> out;
  for (auto* p : c) out.push_back(p->score.ds);
  return out;
}

std::string AblationTable::summary_csv() const {
  std::ostringstream os;
  os << "axis,setting,seeds,ds_mean,ds_std,lfd_mean,lfd_std\n";
  for (const auto& s : settings) {
    std::vector<double> ds, lfd;
    for (const auto& c : cells) {
      if (c.setting != s) continue;
      ds.push_back(c.score.ds);
      lfd.push_back(c.score.lfd);
    }
    os << axis << "," << s << "," << ds.size() << "," << fmt(mean_of(ds)) << "," << fmt(std_of(ds)) << ","
       << fmt(mean_of(lfd)) << "," << fmt(std_of(lfd)) << "\n";
  }
  return os.str();
}

std::string AblationTable::cells_csv() const {
  std::ostringstream os;
  os << "axis,setting,seed,ds,lfd\n";
  for (const auto& c : cells) {
    os << axis << "," << c.setting << "," << c.seed << "," << fmt(c.score.ds) << "," << fmt(c.score.lfd) << "\n";
  }
  return os.str();
}

std::vector<std::string> ablation_settings(const KeyValueConfig& cfg, const std::string& axis) {
  if (axis == "prior") return {"anchored", "gaussian", "kde_only"};
  std::string fallback;
  if (axis == "rank") {
    fallback = "4,16,64";
  } else if (axis == "bandwidth") {
    fallback = "0.005,0.015,0.03,0.06";
  } else if (axis == "steps") {
    fallback = "5,10,20,50";
  } else if (axis == "heldout-fraction") {
    fallback = "0.1,0.25,0.5,1.0";
  } else {
    throw ConfigError("unknown ablation axis '" + axis + "' (prior, rank, bandwidth, steps, heldout-fraction)");
  }
  auto values = split_list(cfg.get_string("ablate.values", ""));
  if (values.empty()) values = split_list(fallback);
  for (const auto& v : values) parse_number(v, "ablate.values");
  return values;
}

AblationTable run_ablation(const vq::Tokenizer& tok, const WindowedDataset& dataset, const KeyValueConfig& cfg,
                           const std::string& axis) {
  const auto train = dataset.subset(data::Split::kTrain);
  const auto held = dataset.subset(data::Split::kHeldout);
  const auto base = flow_config_for(cfg, tok.config());
  const auto opts = flow_train_options(cfg);
  const auto conv = conv_options(cfg);
  const std::size_t seeds = get_size(cfg, "ablate.seeds", 5);
  if (seeds == 0) throw ConfigError("ablate.seeds must be positive");
  std::size_t n = get_size(cfg, "ablate.n", 0);
  if (n == 0) n = held.size();

  AblationTable table;
  table.axis = axis;
  table.settings = ablation_settings(cfg, axis);
  for (std::size_t s = 0; s < seeds; ++s) {
    const std::uint64_t seed = opts.seed + s;
    auto o = opts;
    o.seed = seed;
    const std::uint64_t gen_seed = generation_seed(seed);
    auto gen = [&](const flow::FlowModel& m, std::optional<std::size_t> steps) {
      flow::GenerateOptions g;
      g.n = n;
      g.seed = gen_seed;
      g.steps = steps;
      return flow::euler_generate(m, tok, g).windows;
    };
    auto record = [&](const std::string& setting, const std::vector<float>& windows) {
      table.cells.push_back({setting, seed, score(tok, held, windows, n, seed, conv)});
      log::info("ablate " + axis + "=" + setting + " seed " + std::to_string(seed) + " ds " +
                fmt(table.cells.back().score.ds));
    };

    if (axis == "prior") {
      auto ac = base;
      ac.prior = flow::PriorKind::kAnchored;
      const auto anchored = train_stage2(tok, train, ac, o);
      record("anchored", gen(anchored, std::nullopt));
      auto gc = base;
      gc.prior = flow::PriorKind::kGaussian;
      record("gaussian", gen(train_stage2(tok, train, gc, o), std::nullopt));
      record("kde_only", flow::kde_only_generate(anchored, tok, n, gen_seed).windows);
    } else if (axis == "rank") {
      for (const auto& v : table.settings) {
        auto c = base;
        c.rank = static_cast<std::size_t>(parse_number(v, "rank"));
        c.validate();
        record(v, gen(train_stage2(tok, train, c, o), std::nullopt));
      }
    } else if (axis == "bandwidth") {
      const auto model = train_stage2(tok, train, base, o);
      for (const auto& v : table.settings) {
        auto m = model;
        m.config.alpha = parse_number(v, "bandwidth");
        m.prior.set_alpha(m.config.alpha);
        record(v, gen(m, std::nullopt));
      }
    } else if (axis == "steps") {
      const auto model = train_stage2(tok, train, base, o);
      for (const auto& v : table.settings) {
        const double steps = parse_number(v, "steps");
        if (steps < 1.0 || steps != std::floor(steps)) throw ConfigError("steps must be positive integers");
        record(v, gen(model, static_cast<std::size_t>(steps)));
      }
    } else if (axis == "heldout-fraction") {
      for (const auto& v : table.settings) {
        record(v, gen(train_stage2(tok, train, base, o, parse_number(v, "heldout-fraction")), std::nullopt));
      }
    }
  }
  return table;
}

// ---- commands -------------------------------------------------------------------

CommandResult cmd_train_vqvae(const Run& run) {
  CommandResult res;
  const auto ds = load_dataset(run.config);
  const auto train = ds.subset(data::Split::kTrain);
  const auto vc = vq::VqConfig::from_config(run.config);
  if (vc.seq_len != ds.seq_len || vc.features != ds.features) {
    throw ConfigError("vq.seq_len/vq.features do not match the dataset (" + std::to_string(ds.seq_len) + "x" +
                      std::to_string(ds.features) + ")");
  }
  std::ostringstream log_csv;
  log_csv << "epoch,loss,recon_mse,utilization,codes_reset\n";
  bool finite = true, monotone = true;
  std::size_t last_epoch = 0;
  auto result = vq::train_vqvae(train, vc, vq_train_options(run.config), [&](const vq::VqEpochLog& e) {
    log_csv << e.epoch << "," << fmt(e.loss) << "," << fmt(e.recon_mse) << "," << fmt(e.utilization) << ","
            << e.codes_reset << "\n";
    finite = finite && std::isfinite(e.loss) && std::isfinite(e.recon_mse);
    monotone = monotone && (e.epoch == last_epoch + 1 || (last_epoch == 0 && e.epoch <= 1));
    last_epoch = e.epoch;
  });
  data::Checkpoint ckpt;
  result.tokenizer.save(ckpt);
  const auto path = save_output_checkpoint(run, res, "stage1.ckpt", ckpt);
  write_output(run, res, "vq_log.csv", log_csv.str());

  const auto bytes = data::read_file(path.string());
  const bool round_trip = data::serialize_checkpoint(data::parse_checkpoint(bytes)) == bytes;
  nlohmann::ordered_json extra;
  if (ds.count(data::Split::kHeldout) > 0) {
    const auto rep = vq::evaluate_reconstruction(result.tokenizer, ds.subset(data::Split::kHeldout));
    extra["heldout_mse"] = rep.mse;
    extra["heldout_utilization"] = rep.utilization;
  }
  res.checks.add("losses_finite", finite);
  res.checks.add("epochs_monotone", monotone);
  res.checks.add("checkpoint_round_trip", round_trip);
  write_output(run, res, "vq_report.json", summary_json(res.checks, extra));
  return res;
}

CommandResult cmd_train_flow(const Run& run, const std::string& stage1_path) {
  CommandResult res;
  const auto stage1 = data::load_checkpoint(stage1_path);
  const auto tok = vq::Tokenizer::load(stage1);
  const auto fc = flow_config_for(run.config, tok.config());
  const auto ds = load_dataset(run.config);
  const auto train = ds.subset(data::Split::kTrain);

  data::Checkpoint before;
  tok.save(before);
  const auto before_bytes = data::serialize_checkpoint(before);

  std::ostringstream log_csv;
  log_csv << "step,total,ce,reg_mu,reg_sigma\n";
  bool finite = true;
  auto result = flow::train_flow(tok, train, fc, flow_train_options(run.config), [&](const flow::FlowStepLog& s) {
    log_csv << s.step << "," << fmt(s.total) << "," << fmt(s.ce) << "," << fmt(s.reg_mu) << "," << fmt(s.reg_sigma)
            << "\n";
    finite = finite && std::isfinite(s.total);
  });
  data::Checkpoint after;
  tok.save(after);
  save_output_checkpoint(run, res, "stage2.ckpt", flow::make_stage2_checkpoint(tok, result.model));
  write_output(run, res, "flow_log.csv", log_csv.str());
  res.checks.add("losses_finite", finite);
  res.checks.add("stage1_frozen", data::serialize_checkpoint(after) == before_bytes);
  nlohmann::ordered_json extra;
  extra["anchors"] = train.size();
  if (result.model.config.prior == flow::PriorKind::kAnchored) {
    extra["bandwidth_h"] = result.model.prior.h();
    extra["mean_nn"] = result.model.prior.mean_nn();
  }
  write_output(run, res, "flow_report.json", summary_json(res.checks, extra));
  return res;
}

CommandResult cmd_generate(const Run& run, const std::string& stage2_path) {
  CommandResult res;
  const auto s2 = load_stage2(stage2_path);
  const auto& cfg = run.config;
  const auto mode = cfg.get_string("gen.mode", "flow");
  if (mode != "flow" && mode != "kde_only") throw ConfigError("gen.mode must be flow or kde_only");
  flow::GenerateOptions g;
  g.n = get_size(cfg, "gen.n", 500);
  if (g.n == 0) throw ConfigError("gen.n must be positive");
  g.seed = run.seed;
  if (cfg.has("gen.steps") && !cfg.get("gen.steps").empty()) g.steps = get_size(cfg, "gen.steps", 20);
  if (cfg.has("gen.tau") && !cfg.get("gen.tau").empty()) g.tau = cfg.get_double("gen.tau", 1.0);
  g.kde_only = mode == "kde_only";
  if (g.kde_only) g.steps = 0;
  const auto out = flow::euler_generate(s2.model, s2.tok, g);

  const auto& vc = s2.tok.config();
  const auto ds = as_dataset(out.windows, out.n, vc.seq_len, vc.features, "generated");
  const auto csv = run.out / "generated.csv";
  data::write_windows_csv(csv.string(), ds);
  res.outputs.push_back(csv);

  const std::size_t steps = g.steps.value_or(s2.model.config.ode_steps);
  res.checks.add("window_count", out.windows.size() == g.n * vc.seq_len * vc.features);
  res.checks.add("values_finite", all_finite(out.windows));
  if (g.kde_only) res.checks.add("kde_only_skips_ode", out.velocity_evals == 0);
  nlohmann::ordered_json extra;
  extra["n"] = g.n;
  extra["mode"] = mode;
  extra["steps"] = steps;
  extra["tau"] = g.tau.value_or(s2.model.config.tau_infer);
  extra["velocity_evals"] = out.velocity_evals;
  write_output(run, res, "generate.json", summary_json(res.checks, extra));
  return res;
}

CommandResult cmd_evaluate(const Run& run, const std::string& tokenizer_path, const std::string& synthetic_csv,
                           const std::string& real_csv, const std::string& train_csv) {
  CommandResult res;
  const auto tok = vq::Tokenizer::load(data::load_checkpoint(tokenizer_path));
  const auto& vc = tok.config();
  const auto synth = data::read_windows_csv(synthetic_csv, vc.seq_len);
  WindowedDataset real, train;
  if (real_csv.empty() || train_csv.empty()) {
    const auto ds = load_dataset(run.config);
    real = ds.subset(data::Split::kHeldout);
    train = ds.subset(data::Split::kTrain);
  }
  if (!real_csv.empty()) real = data::read_windows_csv(real_csv, vc.seq_len);
  if (!train_csv.empty()) train = data::read_windows_csv(train_csv, vc.seq_len);
  if (synth.features != vc.features || real.features != vc.features || train.features != vc.features) {
    throw DimensionError("evaluate: feature count differs from the tokenizer");
  }
  const auto report = eval::evaluate_all(tok, eval::WindowSet::of(train), eval::WindowSet::of(real),
                                         eval::WindowSet::of(synth), run.seed, conv_options(run.config));
  const auto hash = config_hash(run.config);
  write_output(run, res, "metrics.json", eval::report_json(report, hash));
  write_output(run, res, "metrics.txt", eval::report_text(report, hash));
  res.checks.add("ds_in_range", report.ds >= 0.0 && report.ds <= 0.5);
  res.checks.add("metrics_finite", std::isfinite(report.ps) && std::isfinite(report.lfd) &&
                                       std::isfinite(report.nn_generated.mean));
  return res;
}

namespace {

void analyze_transport(const Run& run, CommandResult& res) {
  const auto& cfg = run.config;
  const std::size_t n = get_size(cfg, "analyze.trials", 100000);
  std::ostringstream csv;
  csv << "branch,D,r,C,epsilon,h,n,estimate,std_err,target,pass\n";
  const std::pair<std::size_t, double> gauss_cases[] = {{256, 0.0}, {512, 1.0}};
  for (const auto& [D, C] : gauss_cases) {
    const auto e = geometry::transport_gaussian(
        D,
        [C = C](Rng& rng, std::span<double> z) {
          std::fill(z.begin(), z.end(), 0.0);
          if (C > 0.0) z[rng.index(z.size())] = (rng.uniform() < 0.5 ? -1.0 : 1.0) * std::sqrt(C);
        },
        n, run.seed);
    const bool ok = std::abs(e.mean - (static_cast<double>(D) + C)) <= 3.0 * e.std_err;
    res.checks.add("gaussian_D" + std::to_string(D) + "_within_3se", ok);
    csv << "gaussian," << D << ",," << fmt(C) << ",,," << n << "," << fmt(e.mean) << "," << fmt(e.std_err) << ","
        << fmt(static_cast<double>(D) + C) << "," << ok << "\n";
  }
  geometry::TransportExperiment ex;
  ex.r = get_size(cfg, "analyze.rank", 8);
  ex.h = cfg.get_double("analyze.h", 0.1);
  ex.epsilon = cfg.get_double("analyze.epsilon", 0.05);
  ex.n_trials = n;
  std::vector<double> est;
  for (std::size_t D : {128, 512, 2048}) {
    ex.D = D;
    const auto a = geometry::transport_anchored(ex, run.seed);
    const bool ok = a.estimate.mean <= a.bound + 3.0 * a.estimate.std_err;
    res.checks.add("anchored_D" + std::to_string(D) + "_bounded", ok);
    csv << "anchored," << D << "," << ex.r << ",," << fmt(ex.epsilon) << "," << fmt(ex.h) << "," << n << ","
        << fmt(a.estimate.mean) << "," << fmt(a.estimate.std_err) << "," << fmt(a.bound) << "," << ok << "\n";
    est.push_back(a.estimate.mean);
  }
  bool indep = true;
  for (double a : est) {
    for (double b : est) indep = indep && std::abs(a - b) < 0.1 * std::min(a, b);
  }
  res.checks.add("anchored_dimension_independent", indep);
  write_output(run, res, "transport.csv", csv.str());
}

void analyze_pinsker(const Run& run, CommandResult& res) {
  const auto& cfg = run.config;
  const std::size_t n = get_size(cfg, "analyze.instances", 100000);
  const std::size_t nv = get_size(cfg, "analyze.velocity_instances", 10000);
  Rng rng = Rng(run.seed).derive(1);
  std::ostringstream csv;
  csv << "instance,K,R,lhs,rhs,holds\n";
  std::size_t fails = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto b = geometry::random_bound_instance(rng);
    const auto r = geometry::pinsker_check(b);
    fails += !r.holds;
    csv << i << "," << b.K << "," << fmt(b.R) << "," << fmt(r.lhs) << "," << fmt(r.rhs) << "," << r.holds << "\n";
  }
  res.checks.add("pinsker_all_instances", fails == 0);
  write_output(run, res, "pinsker.csv", csv.str());

  Rng vrng = Rng(run.seed).derive(2);
  std::vector<geometry::BoundInstance> inst;
  inst.reserve(nv);
  std::ostringstream vcsv;
  vcsv << "instance,K,R,t,velocity_sq_err,bound\n";
  for (std::size_t i = 0; i < nv; ++i) {
    inst.push_back(geometry::random_bound_instance(vrng));
    const auto one = geometry::velocity_bound_check(std::span(inst).subspan(i, 1));
    vcsv << i << "," << inst[i].K << "," << fmt(inst[i].R) << "," << fmt(inst[i].t) << "," << fmt(one.velocity_mse)
         << "," << fmt(one.bound) << "\n";
  }
  const auto agg = geometry::velocity_bound_check(inst);
  res.checks.add("velocity_bound_all_instances", agg.violations == 0);
  res.checks.add("velocity_bound_aggregate", agg.holds);
  write_output(run, res, "velocity_bound.csv", vcsv.str());
}

void analyze_kde_rate(const Run& run, CommandResult& res) {
  const std::size_t seeds = get_size(run.config, "analyze.kde_seeds", 10);
  std::ostringstream rows, slopes;
  rows << "r,seed,N,h,mise\n";
  slopes << "r,seed,slope,expected,pass\n";
  for (std::size_t r : {1, 2}) {
    bool all = true;
    for (std::size_t s = 0; s < seeds; ++s) {
      geometry::KdeRateOptions o;
      o.r = r;
      const std::uint64_t seed = run.seed + s;
      const auto k = geometry::kde_rate_experiment(o, seed);
      for (std::size_t i = 0; i < k.sample_sizes.size(); ++i) {
        rows << r << "," << seed << "," << k.sample_sizes[i] << "," << fmt(k.bandwidths[i]) << "," << fmt(k.mise[i])
             << "\n";
      }
      const bool ok = std::abs(k.slope - k.expected_slope) <= 0.25;
      all = all && ok;
      slopes << r << "," << seed << "," << fmt(k.slope) << "," << fmt(k.expected_slope) << "," << ok << "\n";
    }
    res.checks.add("kde_slope_r" + std::to_string(r), all);
  }
  write_output(run, res, "kde_rate.csv", rows.str());
  write_output(run, res, "kde_slopes.csv", slopes.str());
}

void analyze_spectrum(const Run& run, CommandResult& res, const std::string& stage2_path,
                      const std::string& baseline_path) {
  if (stage2_path.empty()) throw ConfigError("analyze spectrum needs a Stage-2 checkpoint");
  const auto& cfg = run.config;
  const std::size_t n = get_size(cfg, "analyze.n", 500);
  const std::size_t steps = get_size(cfg, "analyze.steps", 21);
  const double thr = cfg.get_double("analyze.threshold", 0.9);
  const std::vector<double> times{0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0};
  const auto s2 = load_stage2(stage2_path);

  std::ostringstream sv, er;
  sv << "init,t,index,singular_value,cumulative_variance\n";
  er << "init,t,effective_rank\n";
  auto emit = [&](const std::string& name, const geometry::FlowSpectra& f) {
    for (std::size_t k = 0; k < f.times.size(); ++k) {
      const auto& rep = f.reports[k];
      for (std::size_t i = 0; i < rep.singular_values.size(); ++i) {
        sv << name << "," << fmt(f.times[k]) << "," << i << "," << fmt(rep.singular_values[i]) << ","
           << fmt(rep.cumulative_variance[i]) << "\n";
      }
      er << name << "," << fmt(f.times[k]) << "," << rep.effective_rank << "\n";
      const bool ends = rep.cumulative_variance.empty() || rep.effective_rank == 0 ||
                        std::abs(rep.cumulative_variance.back() - 1.0) < 1e-9;
      res.checks.add(name + "_cumulative_ends_at_1_t" + fmt(f.times[k]), ends);
    }
  };
  const auto own = geometry::spectrum_along_flow(s2.model, s2.tok, n, times, steps, thr, run.seed);
  const std::string own_name = flow::to_string(s2.model.config.prior);
  emit(own_name, own);
  if (s2.model.config.prior == flow::PriorKind::kAnchored) {
    res.checks.add("anchored_t0_rank_at_most_r", own.reports[0].effective_rank <= s2.model.config.rank);
  }
  if (!baseline_path.empty()) {
    const auto base = load_stage2(baseline_path);
    flow::check_compatible(s2.tok.config(), base.model.config);
    const auto other = geometry::spectrum_along_flow(base.model, s2.tok, n, times, steps, thr, run.seed);
    emit(std::string(flow::to_string(base.model.config.prior)) + "_baseline", other);
    if (s2.model.config.prior == flow::PriorKind::kAnchored && base.model.config.prior == flow::PriorKind::kGaussian) {
      res.checks.add("gaussian_t0_rank_3x_anchored",
                     other.reports[0].effective_rank >= 3 * own.reports[0].effective_rank);
    }
  }
  write_output(run, res, "spectrum.csv", sv.str());
  write_output(run, res, "effective_rank.csv", er.str());
}

}  // namespace

CommandResult cmd_analyze(const Run& run, const std::string& which, const std::string& stage2_path,
                          const std::string& baseline_path) {
  CommandResult res;
  if (which == "transport") {
    analyze_transport(run, res);
  } else if (which == "pinsker") {
    analyze_pinsker(run, res);
  } else if (which == "kde-rate") {
    analyze_kde_rate(run, res);
  } else if (which == "spectrum") {
    analyze_spectrum(run, res, stage2_path, baseline_path);
  } else {
    throw ConfigError("unknown analysis '" + which + "' (spectrum, transport, pinsker, kde-rate)");
  }
  nlohmann::ordered_json extra;
  extra["analysis"] = which;
  write_output(run, res, "summary.json", summary_json(res.checks, extra));
  return res;
}

CommandResult cmd_forecast(const Run& run, const std::string& stage2_path, const std::string& history_csv) {
  CommandResult res;
  const auto s2 = load_stage2(stage2_path);
  const auto& vc = s2.tok.config();
  if (vc.seq_len % 2 != 0) throw ConfigError("forecasting needs an even window length");
  const std::size_t half = vc.seq_len / 2;
  const auto hist = data::read_windows_csv(history_csv, half);
  if (hist.features != vc.features) throw DimensionError("history feature count differs from the tokenizer");
  flow::ForecastOptions fo;
  fo.seed = run.seed;
  if (run.config.has("gen.steps") && !run.config.get("gen.steps").empty()) {
    fo.steps = get_size(run.config, "gen.steps", 20);
  }
  if (run.config.has("gen.tau") && !run.config.get("gen.tau").empty()) fo.tau = run.config.get_double("gen.tau", 1.0);
  const auto out = flow::forecast(s2.model, s2.tok, hist.windows, hist.size(), fo);
  const auto csv = run.out / "forecast.csv";
  data::write_windows_csv(csv.string(), as_dataset(out, hist.size(), vc.seq_len, vc.features, "forecast"));
  res.outputs.push_back(csv);

  bool kept = true;
  const std::size_t w = vc.seq_len * vc.features, hw = half * vc.features;
  for (std::size_t i = 0; i < hist.size() && kept; ++i) {
    kept = std::equal(hist.windows.begin() + static_cast<std::ptrdiff_t>(i * hw),
                      hist.windows.begin() + static_cast<std::ptrdiff_t>((i + 1) * hw),
                      out.begin() + static_cast<std::ptrdiff_t>(i * w));
  }
  res.checks.add("history_preserved", kept);
  res.checks.add("values_finite", all_finite(out));
  return res;
}

CommandResult cmd_ablate(const Run& run, const std::string& axis, const std::string& stage1_path) {
  CommandResult res;
  const auto ds = load_dataset(run.config);
  vq::Tokenizer tok;
  if (stage1_path.empty()) {
    const auto vc = vq::VqConfig::from_config(run.config);
    tok = vq::train_vqvae(ds.subset(data::Split::kTrain), vc, vq_train_options(run.config)).tokenizer;
    data::Checkpoint ckpt;
    tok.save(ckpt);
    save_output_checkpoint(run, res, "stage1.ckpt", ckpt);
  } else {
    tok = vq::Tokenizer::load(data::load_checkpoint(stage1_path));
  }
  const auto table = run_ablation(tok, ds, run.config, axis);
  write_output(run, res, "ablation.csv", table.summary_csv());
  write_output(run, res, "ablation_runs.csv", table.cells_csv());
  bool finite = true;
  for (const auto& c : table.cells) finite = finite && std::isfinite(c.score.ds) && std::isfinite(c.score.lfd);
  res.checks.add("scores_finite", finite);
  return res;
}

}  // namespace sdflow::pipeline
