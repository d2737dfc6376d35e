// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "sdflow/autodiff/adam.hpp"
#include "sdflow/data/checkpoint.hpp"
#include "sdflow/data/dataset.hpp"
#include "sdflow/flow/network.hpp"
#include "sdflow/manifold/scaffold.hpp"
#include "sdflow/vq/tokenizer.hpp"

namespace sdflow::flow {

enum class TimeDist { kBeta25, kCosine };
enum class PriorKind {
  kAnchored,  // z0 = normalize(u Vᵀ), u from the kernel-smoothed anchor prior
  kGaussian,  // z0 ~ N(0, I_D), no scaffold
};

struct FlowConfig {
  // Inherited from the frozen tokenizer.
  std::size_t codebook_size = 64;  // K
  std::size_t latent_len = 6;      // L
  std::size_t code_dim = 64;       // d_c

  std::size_t d_model = 64;
  std::size_t layers = 1;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  double tau_train = 1.0;
  double tau_infer = 1.0;
  std::size_t ode_steps = 20;  // S
  TimeDist time_dist = TimeDist::kBeta25;
  double t_clamp = 0.0;        // δ; 0 selects 1/S

  PriorKind prior = PriorKind::kAnchored;
  manifold::InitNorm init_norm = manifold::InitNorm::kPerRow;
  std::size_t rank = 16;       // r
  double lambda_mu = 0.1;
  double lambda_sigma = 10.0;
  double alpha = 0.015;  // h = alpha * mean nearest-neighbor distance

  std::size_t dim() const { return latent_len * code_dim; }  // D
  double delta() const { return t_clamp > 0.0 ? t_clamp : 1.0 / static_cast<double>(ode_steps); }
  NetShape net_shape() const;
  void inherit(const vq::VqConfig& vq);
  void validate() const;
  void to_config(data::KeyValueConfig& cfg) const;  // keys prefixed "flow."
  static FlowConfig from_config(const data::KeyValueConfig& cfg);
};

const char* to_string(TimeDist d);
const char* to_string(PriorKind p);
TimeDist parse_time_dist(const std::string& s);
PriorKind parse_prior(const std::string& s);

// ---- posterior and velocity -------------------------------------------------

// Row-wise softmax(logits / tau) over K columns, in double.
std::vector<double> posterior_probs(std::span<const float> logits, std::size_t K, double tau);
// Per-row Σ_k p_k c_k.
std::vector<double> posterior_mean(std::span<const double> probs, const vq::Codebook& cb);
// (mu - z) / max(1 - t, delta), elementwise.
std::vector<double> velocity(std::span<const double> z, std::span<const double> mu, double t, double delta);

double sample_time(TimeDist dist, double delta, Rng& rng);

// Mean over positions of -log softmax(logits / tau)[target]; targets outside [0, K) raise DataError.
ad::Tensor<float> ce_loss(ad::Tape<float>& tape, const ad::Tensor<float>& logits, std::span<const int> targets,
                          double tau);

// ---- trained Stage-2 model --------------------------------------------------

struct FlowModel {
  FlowConfig config;
  FlowNet<float> net;
  manifold::AnchorScaffold scaffold;  // empty for the Gaussian prior
  manifold::AnchorPrior prior;

  void save(data::Checkpoint& ckpt) const;
  static FlowModel load(const data::Checkpoint& ckpt);
  // Rebuilds the anchor prior from the current U at the configured alpha.
  void refresh_prior();
};

// Stage-2 container: Stage-1 tokenizer arrays plus the flow model.
data::Checkpoint make_stage2_checkpoint(const vq::Tokenizer& tok, const FlowModel& model);
// Hard error if K, d_c or L disagree between tokenizer and flow config.
void check_compatible(const vq::VqConfig& vq, const FlowConfig& flow);

struct FlowTrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr_theta = 1e-4;
  double lr_uv = 1e-3;
  std::uint64_t seed = 0;
};

struct FlowStepLog {
  std::size_t step = 0;
  double total = 0.0;
  double ce = 0.0;
  double reg_mu = 0.0;     // λ_μ ||ū||²
  double reg_sigma = 0.0;  // λ_σ |std(U) - 1|
};

// Owns the network, scaffold and optimizers for one Stage-2 run over a fixed
// token set (one row of L tokens per anchor).
class FlowTrainer {
 public:
  FlowTrainer(const FlowConfig& config, const vq::Codebook& codebook, std::vector<int> tokens,
              const FlowTrainOptions& opts);

  std::size_t anchors() const { return n_; }
  // One optimization step on the given anchor rows.
  FlowStepLog train_step(std::span<const std::size_t> batch);
  // One pass over shuffled anchors; returns the per-step logs.
  std::vector<FlowStepLog> train_epoch();
  const FlowModel& model() const { return model_; }
  FlowModel finish();

 private:
  FlowModel model_;
  const vq::Codebook* codebook_;
  std::vector<int> tokens_;
  std::vector<float> targets_;  // dequantized tokens, [n, L, d_c]
  std::size_t n_ = 0;
  FlowTrainOptions opts_;
  Rng time_rng_, noise_rng_, shuffle_rng_;
  std::optional<ad::Adam<float>> opt_theta_, opt_uv_;
  std::size_t step_ = 0;
};

struct FlowTrainResult {
  FlowModel model;
  std::vector<FlowStepLog> log;
};

FlowTrainResult train_flow(const vq::Tokenizer& tok, const data::WindowedDataset& train, const FlowConfig& config,
                           const FlowTrainOptions& opts, const std::function<void(const FlowStepLog&)>& on_step = {});

// ---- generation -------------------------------------------------------------

struct GenerateOptions {
  std::size_t n = 1;
  std::optional<std::size_t> steps;  // S; default from config
  std::optional<double> tau;         // τ_infer; default from config
  bool kde_only = false;
  std::uint64_t seed = 0;
  // Snapshot z at these times (mapped to step round(t S)).
  std::vector<double> snapshot_times;
};

struct GenerateResult {
  std::size_t n = 0;
  std::vector<int> tokens;               // [n, L]
  std::vector<float> windows;            // [n, ℓ, d]
  std::size_t velocity_evals = 0;        // step-counter probe
  std::vector<std::vector<float>> snapshots;  // per snapshot time, [n, D]
};

// z0 for one sample under the model's prior.
std::vector<double> sample_initial(const FlowModel& model, Rng& rng);

// Euler integration of the posterior-mean field from z0. `on_step` sees the
// state after each step. Returns the number of velocity evaluations.
std::size_t integrate(const FlowModel& model, const vq::Codebook& cb, std::vector<double>& z, std::size_t steps,
                      double tau, const std::function<void(std::size_t, double, std::vector<double>&)>& on_step = {});

// Sample i uses stream derive(i) of Rng(seed), so results do not depend on
// batching or thread count.
GenerateResult euler_generate(const FlowModel& model, const vq::Tokenizer& tok, const GenerateOptions& opts);
// euler_generate with S = 0.
GenerateResult kde_only_generate(const FlowModel& model, const vq::Tokenizer& tok, std::size_t n,
                                 std::uint64_t seed);

struct ForecastOptions {
  std::optional<std::size_t> steps;
  std::optional<double> tau;
  std::uint64_t seed = 0;
};
// history: n windows of ℓ/2 rows. Returns n full windows whose first half is the history.
std::vector<float> forecast(const FlowModel& model, const vq::Tokenizer& tok, std::span<const float> history,
                            std::size_t n, const ForecastOptions& opts);

}  // namespace sdflow::flow
