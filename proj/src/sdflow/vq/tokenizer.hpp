// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sdflow/autodiff/nn.hpp"
#include "sdflow/data/checkpoint.hpp"
#include "sdflow/data/config.hpp"
#include "sdflow/data/dataset.hpp"
#include "sdflow/vq/codebook.hpp"

namespace sdflow::vq {

struct VqConfig {
  std::size_t seq_len = 24;       // ℓ
  std::size_t features = 5;       // d
  std::size_t downsample = 4;     // s
  std::size_t codebook_size = 64; // K
  std::size_t code_dim = 64;      // d_c
  std::size_t hidden = 64;
  std::size_t layers = 1;         // residual blocks on each side
  std::size_t kernel = 3;
  double lambda_embed = 0.5;
  double ema_decay = 0.99;
  std::int64_t reset_threshold = 0;

  std::size_t latent_len() const { return seq_len / downsample; }  // L
  void validate() const;
  void to_config(data::KeyValueConfig& cfg) const;  // keys prefixed "vq."
  static VqConfig from_config(const data::KeyValueConfig& cfg);
};

// Convolutional encoder/decoder around a cosine-similarity codebook.
class Tokenizer {
 public:
  Tokenizer() = default;
  Tokenizer(const VqConfig& config, Rng& rng);

  const VqConfig& config() const { return cfg_; }
  Codebook& codebook() { return codebook_; }
  const Codebook& codebook() const { return codebook_; }

  // x: [B, ℓ, d] -> unit rows [B, L, d_c]
  ad::Tensor<float> encode(ad::Tape<float>& tape, const ad::Tensor<float>& x) const;
  // h: [B, L, d_c] -> [B, ℓ, d]
  ad::Tensor<float> decode(ad::Tape<float>& tape, const ad::Tensor<float>& h) const;

  // Untracked batch helpers over n windows / latent sequences.
  std::vector<float> encode_windows(std::span<const float> windows, std::size_t n) const;
  std::vector<float> decode_latents(std::span<const float> latents, std::size_t n) const;
  std::vector<int> tokenize(std::span<const float> windows, std::size_t n) const;
  std::vector<float> detokenize(std::span<const int> tokens, std::size_t n) const;

  ad::ParamList<float> parameters() const;
  void save(data::Checkpoint& ckpt) const;
  static Tokenizer load(const data::Checkpoint& ckpt);

 private:
  VqConfig cfg_;
  ad::Conv1d<float> enc_in_, enc_down_, enc_out_;
  std::vector<ad::ResBlock1d<float>> enc_blocks_;
  ad::Conv1d<float> dec_in_, dec_up_, dec_out_;
  std::vector<ad::ResBlock1d<float>> dec_blocks_;
  Codebook codebook_;
};

// ||x - x̃||² (per-element mean) + (λ/L) Σ_i (1 - h_i · sg(h̃_i)), averaged over the batch.
ad::Tensor<float> vq_loss(ad::Tape<float>& tape, const ad::Tensor<float>& x, const ad::Tensor<float>& x_rec,
                          const ad::Tensor<float>& h, const ad::Tensor<float>& h_tilde, double lambda);

struct VqTrainOptions {
  std::size_t epochs = 100;
  std::size_t batch_size = 64;
  double lr = 1e-3;
  std::uint64_t seed = 0;
};

struct VqEpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double recon_mse = 0.0;
  double utilization = 0.0;  // fraction of codes assigned during the epoch
  std::size_t codes_reset = 0;
};

struct VqTrainResult {
  Tokenizer tokenizer;
  std::vector<VqEpochLog> log;
};

VqTrainResult train_vqvae(const data::WindowedDataset& train, const VqConfig& config, const VqTrainOptions& opts,
                          const std::function<void(const VqEpochLog&)>& on_epoch = {});

struct ReconstructionReport {
  double mse = 0.0;          // through quantization
  double utilization = 0.0;  // fraction of codes used at least once
};
ReconstructionReport evaluate_reconstruction(const Tokenizer& tok, const data::WindowedDataset& ds);

}  // namespace sdflow::vq
