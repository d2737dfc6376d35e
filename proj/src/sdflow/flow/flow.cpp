// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/flow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "sdflow/common/error.hpp"
#include "sdflow/common/fpenv.hpp"
#include "sdflow/common/log.hpp"
#include "sdflow/common/parallel.hpp"

namespace sdflow::flow {

using ad::Tape;
using ad::Tensor;

// ---- config -----------------------------------------------------------------

const char* to_string(TimeDist d) { return d == TimeDist::kBeta25 ? "beta" : "cosine"; }
const char* to_string(PriorKind p) { return p == PriorKind::kAnchored ? "anchored" : "gaussian"; }

TimeDist parse_time_dist(const std::string& s) {
  if (s == "beta") return TimeDist::kBeta25;
  if (s == "cosine") return TimeDist::kCosine;
  throw ConfigError("unknown time distribution '" + s + "' (expected beta or cosine)");
}

PriorKind parse_prior(const std::string& s) {
  if (s == "anchored") return PriorKind::kAnchored;
  if (s == "gaussian") return PriorKind::kGaussian;
  throw ConfigError("unknown prior '" + s + "' (expected anchored or gaussian)");
}

namespace {

const char* to_string(manifold::InitNorm n) { return n == manifold::InitNorm::kGlobal ? "global" : "row"; }

manifold::InitNorm parse_init_norm(const std::string& s) {
  if (s == "global") return manifold::InitNorm::kGlobal;
  if (s == "row") return manifold::InitNorm::kPerRow;
  throw ConfigError("unknown init normalization '" + s + "' (expected global or row)");
}

}  // namespace

NetShape FlowConfig::net_shape() const {
  NetShape s;
  s.latent_len = latent_len;
  s.code_dim = code_dim;
  s.codebook_size = codebook_size;
  s.d_model = d_model;
  s.layers = layers;
  s.heads = heads;
  s.mlp_ratio = mlp_ratio;
  return s;
}

void FlowConfig::inherit(const vq::VqConfig& vq) {
  codebook_size = vq.codebook_size;
  latent_len = vq.latent_len();
  code_dim = vq.code_dim;
}

void FlowConfig::validate() const {
  net_shape().validate();
  if (!(tau_train > 0) || !(tau_infer > 0)) throw ConfigError("temperatures must be positive");
  if (ode_steps == 0) throw ConfigError("ode_steps must be positive");
  if (!(t_clamp >= 0 && t_clamp < 1)) throw ConfigError("t_clamp must lie in [0, 1)");
  if (prior == PriorKind::kAnchored && (rank == 0 || rank > dim())) {
    throw ConfigError("rank " + std::to_string(rank) + " outside [1, D=" + std::to_string(dim()) + "]");
  }
  if (!(lambda_mu >= 0) || !(lambda_sigma >= 0)) throw ConfigError("regularization weights must be non-negative");
  if (!(alpha >= 0)) throw ConfigError("alpha must be non-negative");
}

void FlowConfig::to_config(data::KeyValueConfig& cfg) const {
  using data::format_double;
  cfg.set("flow.codebook_size", std::to_string(codebook_size));
  cfg.set("flow.latent_len", std::to_string(latent_len));
  cfg.set("flow.code_dim", std::to_string(code_dim));
  cfg.set("flow.d_model", std::to_string(d_model));
  cfg.set("flow.layers", std::to_string(layers));
  cfg.set("flow.heads", std::to_string(heads));
  cfg.set("flow.mlp_ratio", std::to_string(mlp_ratio));
  cfg.set("flow.tau_train", format_double(tau_train));
  cfg.set("flow.tau_infer", format_double(tau_infer));
  cfg.set("flow.ode_steps", std::to_string(ode_steps));
  cfg.set("flow.time_dist", to_string(time_dist));
  cfg.set("flow.t_clamp", format_double(t_clamp));
  cfg.set("flow.prior", to_string(prior));
  cfg.set("flow.init_norm", to_string(init_norm));
  cfg.set("flow.rank", std::to_string(rank));
  cfg.set("flow.lambda_mu", format_double(lambda_mu));
  cfg.set("flow.lambda_sigma", format_double(lambda_sigma));
  cfg.set("flow.alpha", format_double(alpha));
}

FlowConfig FlowConfig::from_config(const data::KeyValueConfig& cfg) {
  FlowConfig c;
  auto u = [&](const char* key, std::size_t fallback) {
    const auto v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.codebook_size = u("flow.codebook_size", c.codebook_size);
  c.latent_len = u("flow.latent_len", c.latent_len);
  c.code_dim = u("flow.code_dim", c.code_dim);
  c.d_model = u("flow.d_model", c.d_model);
  c.layers = u("flow.layers", c.layers);
  c.heads = u("flow.heads", c.heads);
  c.mlp_ratio = u("flow.mlp_ratio", c.mlp_ratio);
  c.tau_train = cfg.get_double("flow.tau_train", c.tau_train);
  c.tau_infer = cfg.get_double("flow.tau_infer", c.tau_infer);
  c.ode_steps = u("flow.ode_steps", c.ode_steps);
  c.time_dist = parse_time_dist(cfg.get_string("flow.time_dist", to_string(c.time_dist)));
  c.t_clamp = cfg.get_double("flow.t_clamp", c.t_clamp);
  c.prior = parse_prior(cfg.get_string("flow.prior", to_string(c.prior)));
  c.init_norm = parse_init_norm(cfg.get_string("flow.init_norm", to_string(c.init_norm)));
  c.rank = u("flow.rank", c.rank);
  c.lambda_mu = cfg.get_double("flow.lambda_mu", c.lambda_mu);
  c.lambda_sigma = cfg.get_double("flow.lambda_sigma", c.lambda_sigma);
  c.alpha = cfg.get_double("flow.alpha", c.alpha);
  c.validate();
  return c;
}

void check_compatible(const vq::VqConfig& vq, const FlowConfig& flow) {
  auto mismatch = [](const char* what, std::size_t a, std::size_t b) {
    throw ConfigError(std::string("tokenizer/flow mismatch in ") + what + ": tokenizer " + std::to_string(a) +
                      ", flow " + std::to_string(b));
  };
  if (vq.codebook_size != flow.codebook_size) mismatch("K", vq.codebook_size, flow.codebook_size);
  if (vq.code_dim != flow.code_dim) mismatch("d_c", vq.code_dim, flow.code_dim);
  if (vq.latent_len() != flow.latent_len) mismatch("L", vq.latent_len(), flow.latent_len);
}

// ---- posterior and velocity -------------------------------------------------

std::vector<double> posterior_probs(std::span<const float> logits, std::size_t K, double tau) {
  if (K == 0 || logits.size() % K != 0) throw DimensionError("posterior_probs: logits not a multiple of K");
  if (!(tau > 0)) throw ParameterError("temperature must be positive");
  std::vector<double> p(logits.size());
  for (std::size_t r = 0; r < logits.size() / K; ++r) {
    const float* row = logits.data() + r * K;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) mx = std::max(mx, static_cast<double>(row[k]) / tau);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      p[r * K + k] = std::exp(static_cast<double>(row[k]) / tau - mx);
      s += p[r * K + k];
    }
    for (std::size_t k = 0; k < K; ++k) p[r * K + k] /= s;
  }
  return p;
}

std::vector<double> posterior_mean(std::span<const double> probs, const vq::Codebook& cb) {
  if (cb.size == 0 || probs.size() % cb.size != 0) throw DimensionError("posterior_mean: probs not a multiple of K");
  const std::size_t rows = probs.size() / cb.size;
  std::vector<double> mu(rows * cb.dim, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < cb.size; ++k) {
      const double p = probs[r * cb.size + k];
      if (p == 0.0) continue;
      const float* c = cb.codes.data() + k * cb.dim;
      for (std::size_t j = 0; j < cb.dim; ++j) mu[r * cb.dim + j] += p * c[j];
    }
  }
  return mu;
}

std::vector<double> velocity(std::span<const double> z, std::span<const double> mu, double t, double delta) {
  if (z.size() != mu.size()) throw DimensionError("velocity: state and mean differ in size");
  const double denom = std::max(1.0 - t, delta);
  std::vector<double> v(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) v[i] = (mu[i] - z[i]) / denom;
  return v;
}

double sample_time(TimeDist dist, double delta, Rng& rng) {
  const double t = dist == TimeDist::kBeta25 ? rng.beta(2.0, 5.0)
                                             : 1.0 - std::cos(std::numbers::pi * rng.uniform() / 2.0);
  return std::clamp(t, 0.0, 1.0 - delta);
}

Tensor<float> ce_loss(Tape<float>& tape, const Tensor<float>& logits, std::span<const int> targets, double tau) {
  const std::size_t K = logits.size(logits.rank() - 1);
  if (targets.size() * K != logits.numel()) throw DimensionError("ce_loss: one target per position required");
  return ad::cross_entropy(tape, logits, targets, static_cast<float>(tau));
}

// ---- model persistence --------------------------------------------------------

void FlowModel::refresh_prior() {
  if (config.prior == PriorKind::kAnchored) prior = manifold::AnchorPrior::from_scaffold(scaffold, config.alpha);
}

void FlowModel::save(data::Checkpoint& ckpt) const {
  config.to_config(ckpt.config);
  const auto params = net.parameters();
  for (const auto& [name, t] : params.entries()) ckpt.add(name, t);
  if (config.prior == PriorKind::kAnchored) {
    ckpt.add("scaffold.U", scaffold.U);
    ckpt.add("scaffold.V", scaffold.V);
    ckpt.config.set("prior.alpha", data::format_double(prior.alpha()));
    ckpt.config.set("prior.h", data::format_double(prior.h()));
    ckpt.config.set("prior.mean_nn", data::format_double(prior.mean_nn()));
    ckpt.config.set("prior.anchors", std::to_string(prior.M()));
  }
}

FlowModel FlowModel::load(const data::Checkpoint& ckpt) {
  FlowModel m;
  m.config = FlowConfig::from_config(ckpt.config);
  Rng scratch(0);
  m.net = FlowNet<float>(m.config.net_shape(), scratch);
  const auto params = m.net.parameters();
  for (const auto& [name, t] : params.entries()) {
    auto handle = t;
    ckpt.restore(name, handle);
  }
  if (m.config.prior == PriorKind::kAnchored) {
    const auto& U = ckpt.get("scaffold.U");
    const auto& V = ckpt.get("scaffold.V");
    if (U.shape.size() != 2 || U.shape[1] != m.config.rank || V.shape != ad::Shape{m.config.dim(), m.config.rank}) {
      throw LoadError("scaffold shapes do not match the flow config");
    }
    m.scaffold = manifold::init_scaffold(U.shape[0], m.config.rank, m.config.dim(), 0);
    m.scaffold.lambda_mu = m.config.lambda_mu;
    m.scaffold.lambda_sigma = m.config.lambda_sigma;
    ckpt.restore("scaffold.U", m.scaffold.U);
    ckpt.restore("scaffold.V", m.scaffold.V);
    m.refresh_prior();
  }
  return m;
}

data::Checkpoint make_stage2_checkpoint(const vq::Tokenizer& tok, const FlowModel& model) {
  check_compatible(tok.config(), model.config);
  data::Checkpoint ckpt;
  tok.save(ckpt);
  model.save(ckpt);
  return ckpt;
}

// ---- training ---------------------------------------------------------------

FlowTrainer::FlowTrainer(const FlowConfig& config, const vq::Codebook& codebook, std::vector<int> tokens,
                         const FlowTrainOptions& opts)
    : codebook_(&codebook), tokens_(std::move(tokens)), opts_(opts) {
  config.validate();
  if (codebook.size != config.codebook_size || codebook.dim != config.code_dim) {
    throw ConfigError("codebook shape does not match the flow config");
  }
  if (tokens_.empty() || tokens_.size() % config.latent_len != 0) {
    throw DataError("token buffer is not a whole number of length-" + std::to_string(config.latent_len) +
                    " sequences");
  }
  if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(opts.lr_theta > 0) || !(opts.lr_uv > 0)) throw ConfigError("learning rates must be positive");
  n_ = tokens_.size() / config.latent_len;
  targets_ = vq::dequantize(tokens_, codebook);

  Rng root(opts.seed);
  Rng init = root.derive(1);
  time_rng_ = root.derive(3);
  noise_rng_ = root.derive(4);
  shuffle_rng_ = root.derive(5);

  model_.config = config;
  model_.net = FlowNet<float>(config.net_shape(), init);
  opt_theta_.emplace(model_.net.parameters().tensors(), ad::AdamOptions{.lr = opts.lr_theta});
  if (config.prior == PriorKind::kAnchored) {
    if (n_ < 2) throw ConfigError("the anchored prior needs at least 2 anchors");
    model_.scaffold = manifold::init_scaffold(n_, config.rank, config.dim(), root.derive(2).seed());
    model_.scaffold.lambda_mu = config.lambda_mu;
    model_.scaffold.lambda_sigma = config.lambda_sigma;
    opt_uv_.emplace(std::vector<Tensor<float>>{model_.scaffold.U, model_.scaffold.V},
                    ad::AdamOptions{.lr = opts.lr_uv});
  }
}

FlowStepLog FlowTrainer::train_step(std::span<const std::size_t> batch) {
  const FlowConfig& cfg = model_.config;
  const std::size_t B = batch.size(), L = cfg.latent_len, dc = cfg.code_dim, D = cfg.dim();
  if (B == 0) throw ContractError("train_step on an empty batch");
  ScopedFlushDenormals ftz;
  std::vector<float> t(B), one_minus_t(B), z1(B * D);
  std::vector<int> y(B * L);
  for (std::size_t i = 0; i < B; ++i) {
    if (batch[i] >= n_) throw DimensionError("batch index outside the anchor set");
    t[i] = static_cast<float>(sample_time(cfg.time_dist, cfg.delta(), time_rng_));
    one_minus_t[i] = 1.0f - t[i];
    std::copy_n(targets_.begin() + batch[i] * D, D, z1.begin() + i * D);
    std::copy_n(tokens_.begin() + batch[i] * L, L, y.begin() + i * L);
  }
  const bool anchored = cfg.prior == PriorKind::kAnchored;
  Tape<float> tape;
  opt_theta_->zero_grad();
  if (anchored) opt_uv_->zero_grad();

  Tensor<float> z0;
  if (anchored) {
    auto coords = ad::gather_rows(tape, model_.scaffold.U, batch);
    z0 = manifold::anchor_init(tape, coords, model_.scaffold.V, L, dc, cfg.init_norm);
  } else {
    z0 = Tensor<float>({B, L, dc});
    for (auto& v : z0.data()) v = static_cast<float>(noise_rng_.normal());
  }
  Tensor<float> target({B, L, dc}, std::move(z1));
  auto zt = ad::add(tape, ad::scale_rows<float>(tape, z0, one_minus_t), ad::scale_rows<float>(tape, target, t));
  auto logits = model_.net.logits(tape, zt, t);
  auto ce = ce_loss(tape, logits, y, cfg.tau_train);
  auto total = ce;
  FlowStepLog log;
  log.step = step_;
  if (anchored && (cfg.lambda_mu > 0 || cfg.lambda_sigma > 0)) {
    total = ad::add(tape, ce, manifold::coord_reg_loss(tape, model_.scaffold.U, cfg.lambda_mu, cfg.lambda_sigma));
    const auto st = manifold::coord_stats(model_.scaffold.U.data(), n_, cfg.rank);
    log.reg_mu = cfg.lambda_mu * st.mean_norm * st.mean_norm;
    log.reg_sigma = cfg.lambda_sigma * std::abs(st.global_std - 1.0);
  }
  log.ce = ce.item();
  log.total = total.item();
  if (!std::isfinite(log.total)) {
    throw DivergenceError("flow training diverged at step " + std::to_string(step_) + " (ce " +
                          std::to_string(log.ce) + ", total " + std::to_string(log.total) + ")");
  }
  tape.backward(total);
  opt_theta_->step();
  if (anchored) opt_uv_->step();
  ++step_;
  return log;
}

std::vector<FlowStepLog> FlowTrainer::train_epoch() {
  std::vector<std::size_t> order(n_);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng_.engine());
  std::vector<FlowStepLog> logs;
  for (std::size_t start = 0; start < n_; start += opts_.batch_size) {
    const std::size_t b = std::min(opts_.batch_size, n_ - start);
    logs.push_back(train_step(std::span<const std::size_t>(order.data() + start, b)));
  }
  return logs;
}

FlowModel FlowTrainer::finish() {
  model_.refresh_prior();
  return model_;
}

FlowTrainResult train_flow(const vq::Tokenizer& tok, const data::WindowedDataset& train, const FlowConfig& config,
                           const FlowTrainOptions& opts, const std::function<void(const FlowStepLog&)>& on_step) {
  check_compatible(tok.config(), config);
  if (train.size() == 0) throw DataError("train_flow: empty dataset");
  if (train.seq_len != tok.config().seq_len || train.features != tok.config().features) {
    throw ConfigError("dataset windows do not match the tokenizer");
  }
  FlowTrainer trainer(config, tok.codebook(), tok.tokenize(train.windows, train.size()), opts);
  FlowTrainResult result;
  for (std::size_t e = 0; e < opts.epochs; ++e) {
    for (const auto& entry : trainer.train_epoch()) {
      if (on_step) on_step(entry);
      result.log.push_back(entry);
    }
    const auto& last = result.log.back();
    log::debug("flow epoch " + std::to_string(e) + " ce " + std::to_string(last.ce) + " total " +
               std::to_string(last.total));
  }
  result.model = trainer.finish();
  return result;
}

// ---- generation -------------------------------------------------------------

std::vector<double> sample_initial(const FlowModel& model, Rng& rng) {
  const FlowConfig& cfg = model.config;
  if (cfg.prior == PriorKind::kGaussian) {
    std::vector<double> z(cfg.dim());
    for (auto& v : z) v = rng.normal();
    return z;
  }
  if (model.prior.M() == 0) throw ContractError("anchored model has no prior; call refresh_prior");
  const auto u = model.prior.sample(rng);
  const std::vector<float> uf(u.begin(), u.end());
  const auto z0 = manifold::anchor_init(uf, model.scaffold.V, cfg.latent_len, cfg.code_dim, cfg.init_norm, rng);
  return {z0.begin(), z0.end()};
}

std::size_t integrate(const FlowModel& model, const vq::Codebook& cb, std::vector<double>& z, std::size_t steps,
                      double tau, const std::function<void(std::size_t, double, std::vector<double>&)>& on_step) {
  const FlowConfig& cfg = model.config;
  if (z.size() != cfg.dim()) throw DimensionError("integrate: state has the wrong size");
  const double delta = cfg.t_clamp > 0.0 ? cfg.t_clamp : (steps ? 1.0 / static_cast<double>(steps) : 1.0);
  std::size_t evals = 0;
  ScopedFlushDenormals ftz;
  Tape<float> tape(false);
  for (std::size_t s = 0; s < steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    Tensor<float> zt({1, cfg.latent_len, cfg.code_dim}, std::vector<float>(z.begin(), z.end()));
    const float tf = static_cast<float>(t);
    auto logits = model.net.logits(tape, zt, std::span<const float>(&tf, 1));
    const auto mu = posterior_mean(posterior_probs(logits.data(), cfg.codebook_size, tau), cb);
    const auto v = velocity(z, mu, t, delta);
    ++evals;
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += v[i] / static_cast<double>(steps);
    if (on_step) on_step(s + 1, static_cast<double>(s + 1) / static_cast<double>(steps), z);
  }
  return evals;
}

namespace {

std::vector<int> quantize_state(const std::vector<double>& z, const vq::Codebook& cb) {
  const std::vector<float> zf(z.begin(), z.end());
  return vq::quantize_rows(zf, cb);
}

}  // namespace

GenerateResult euler_generate(const FlowModel& model, const vq::Tokenizer& tok, const GenerateOptions& opts) {
  const FlowConfig& cfg = model.config;
  check_compatible(tok.config(), cfg);
  const std::size_t S = opts.kde_only ? 0 : opts.steps.value_or(cfg.ode_steps);
  const double tau = opts.tau.value_or(cfg.tau_infer);
  if (!(tau > 0)) throw ParameterError("temperature must be positive");
  const std::size_t n = opts.n, L = cfg.latent_len, D = cfg.dim();
  const std::size_t w = tok.config().seq_len * tok.config().features;
  std::vector<std::size_t> snap_steps;
  for (double t : opts.snapshot_times) {
    if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("snapshot times must lie in [0, 1]");
    snap_steps.push_back(static_cast<std::size_t>(std::lround(t * static_cast<double>(S))));
  }

  GenerateResult out;
  out.n = n;
  out.tokens.resize(n * L);
  out.windows.resize(n * w);
  out.snapshots.assign(snap_steps.size(), std::vector<float>(n * D));
  std::vector<std::size_t> evals(n, 0);
  const Rng root(opts.seed);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = root.derive(i);
    auto z = sample_initial(model, rng);
    auto snap = [&](std::size_t step, const std::vector<double>& state) {
      for (std::size_t k = 0; k < snap_steps.size(); ++k) {
        if (snap_steps[k] == step) std::copy(state.begin(), state.end(), out.snapshots[k].begin() + i * D);
      }
    };
    snap(0, z);
    evals[i] = integrate(model, tok.codebook(), z, S, tau,
                         [&](std::size_t step, double, std::vector<double>& state) { snap(step, state); });
    const auto y = quantize_state(z, tok.codebook());
    std::copy(y.begin(), y.end(), out.tokens.begin() + i * L);
    const auto x = tok.detokenize(y, 1);
    std::copy(x.begin(), x.end(), out.windows.begin() + i * w);
  });
  out.velocity_evals = std::accumulate(evals.begin(), evals.end(), std::size_t{0});
  return out;
}

GenerateResult kde_only_generate(const FlowModel& model, const vq::Tokenizer& tok, std::size_t n,
                                 std::uint64_t seed) {
  GenerateOptions opts;
  opts.n = n;
  opts.seed = seed;
  opts.kde_only = true;
  return euler_generate(model, tok, opts);
}

std::vector<float> forecast(const FlowModel& model, const vq::Tokenizer& tok, std::span<const float> history,
                            std::size_t n, const ForecastOptions& opts) {
  const FlowConfig& cfg = model.config;
  const vq::VqConfig& vc = tok.config();
  check_compatible(vc, cfg);
  const std::size_t L = cfg.latent_len, dc = cfg.code_dim, ell = vc.seq_len, d = vc.features;
  if (L % 2 != 0 || ell % 2 != 0 || (L / 2) * vc.downsample != ell / 2) {
    throw ConfigError("forecast needs an even latent length aligned with half the window (L=" + std::to_string(L) +
                      ", seq_len=" + std::to_string(ell) + ")");
  }
  const std::size_t half = ell / 2, hl = L / 2;
  if (history.size() != n * half * d) throw DimensionError("forecast: history must be n windows of seq_len/2 rows");
  for (float v : history) {
    if (!std::isfinite(v)) throw DataError("forecast: non-finite history value");
  }
  const std::size_t S = opts.steps.value_or(cfg.ode_steps);
  const double tau = opts.tau.value_or(cfg.tau_infer);
  std::vector<float> out(n * ell * d);
  const Rng root(opts.seed);
  parallel_for(n, [&](std::size_t i) {
    Rng rng = root.derive(i);
    const float* h = history.data() + i * half * d;
    // Edge-pad the history to a full window so the encoder sees its usual length.
    std::vector<float> padded(ell * d);
    std::copy_n(h, half * d, padded.begin());
    for (std::size_t r = half; r < ell; ++r) std::copy_n(h + (half - 1) * d, d, padded.begin() + r * d);
    auto hist_tokens = tok.tokenize(padded, 1);
    hist_tokens.resize(hl);
    const auto hist_codes = vq::dequantize(hist_tokens, tok.codebook());

    auto z = sample_initial(model, rng);
    const std::vector<double> z0_hist(z.begin(), z.begin() + hl * dc);
    integrate(model, tok.codebook(), z, S, tau, [&](std::size_t, double t, std::vector<double>& state) {
      for (std::size_t j = 0; j < hl * dc; ++j) state[j] = (1.0 - t) * z0_hist[j] + t * hist_codes[j];
    });
    auto y = quantize_state(z, tok.codebook());
    std::copy(hist_tokens.begin(), hist_tokens.end(), y.begin());
    auto x = tok.detokenize(y, 1);
    std::copy_n(h, half * d, x.begin());
    std::copy(x.begin(), x.end(), out.begin() + i * ell * d);
  });
  return out;
}

}  // namespace sdflow::flow
