// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/vq/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sdflow/autodiff/adam.hpp"
#include "sdflow/common/error.hpp"
#include "sdflow/common/fpenv.hpp"
#include "sdflow/common/log.hpp"

namespace sdflow::vq {

using ad::Tape;
using ad::Tensor;

namespace {

constexpr std::size_t kEvalBatch = 256;

std::size_t down_kernel(const VqConfig& c) { return std::max(c.kernel, c.downsample); }
std::size_t down_padding(const VqConfig& c) { return (down_kernel(c) - c.downsample + 1) / 2; }

}  // namespace

void VqConfig::validate() const {
  if (!seq_len || !features || !downsample || !codebook_size || !code_dim || !hidden || !kernel) {
    throw ConfigError("vq config fields must be positive");
  }
  if (seq_len % downsample != 0) {
    throw ConfigError("seq_len " + std::to_string(seq_len) + " not divisible by downsample " +
                      std::to_string(downsample));
  }
  if (kernel % 2 == 0) throw ConfigError("vq kernel must be odd");
  if (!(lambda_embed > 0)) throw ConfigError("lambda_embed must be positive");
  if (!(ema_decay > 0 && ema_decay < 1)) throw ConfigError("ema_decay must lie in (0, 1)");
  if (reset_threshold < 0) throw ConfigError("reset_threshold must be non-negative");
}

void VqConfig::to_config(data::KeyValueConfig& cfg) const {
  using data::format_double;
  cfg.set("vq.seq_len", std::to_string(seq_len));
  cfg.set("vq.features", std::to_string(features));
  cfg.set("vq.downsample", std::to_string(downsample));
  cfg.set("vq.codebook_size", std::to_string(codebook_size));
  cfg.set("vq.code_dim", std::to_string(code_dim));
  cfg.set("vq.hidden", std::to_string(hidden));
  cfg.set("vq.layers", std::to_string(layers));
  cfg.set("vq.kernel", std::to_string(kernel));
  cfg.set("vq.lambda_embed", format_double(lambda_embed));
  cfg.set("vq.ema_decay", format_double(ema_decay));
  cfg.set("vq.reset_threshold", std::to_string(reset_threshold));
}

VqConfig VqConfig::from_config(const data::KeyValueConfig& cfg) {
  VqConfig c;
  auto u = [&](const char* key, std::size_t fallback) {
    const auto v = cfg.get_int(key, static_cast<long long>(fallback));
    if (v < 0) throw ConfigError(std::string(key) + " must be non-negative");
    return static_cast<std::size_t>(v);
  };
  c.seq_len = u("vq.seq_len", c.seq_len);
  c.features = u("vq.features", c.features);
  c.downsample = u("vq.downsample", c.downsample);
  c.codebook_size = u("vq.codebook_size", c.codebook_size);
  c.code_dim = u("vq.code_dim", c.code_dim);
  c.hidden = u("vq.hidden", c.hidden);
  c.layers = u("vq.layers", c.layers);
  c.kernel = u("vq.kernel", c.kernel);
  c.lambda_embed = cfg.get_double("vq.lambda_embed", c.lambda_embed);
  c.ema_decay = cfg.get_double("vq.ema_decay", c.ema_decay);
  c.reset_threshold = cfg.get_int("vq.reset_threshold", c.reset_threshold);
  c.validate();
  return c;
}

Tokenizer::Tokenizer(const VqConfig& config, Rng& rng) : cfg_(config) {
  cfg_.validate();
  const auto& c = cfg_;
  const std::size_t pad = c.kernel / 2;
  enc_in_ = ad::Conv1d<float>(c.features, c.hidden, c.kernel, 1, pad, rng);
  for (std::size_t i = 0; i < c.layers; ++i) enc_blocks_.emplace_back(c.hidden, c.kernel, rng);
  enc_down_ = ad::Conv1d<float>(c.hidden, c.hidden, down_kernel(c), c.downsample, down_padding(c), rng);
  enc_out_ = ad::Conv1d<float>(c.hidden, c.code_dim, 1, 1, 0, rng);
  dec_in_ = ad::Conv1d<float>(c.code_dim, c.hidden, 1, 1, 0, rng);
  dec_up_ = ad::Conv1d<float>(c.hidden, c.hidden, c.kernel, 1, pad, rng);
  for (std::size_t i = 0; i < c.layers; ++i) dec_blocks_.emplace_back(c.hidden, c.kernel, rng);
  dec_out_ = ad::Conv1d<float>(c.hidden, c.features, c.kernel, 1, pad, rng);
  codebook_ = Codebook::random(c.codebook_size, c.code_dim, rng);
}

Tensor<float> Tokenizer::encode(Tape<float>& tape, const Tensor<float>& x) const {
  if (x.rank() != 3 || x.size(1) != cfg_.seq_len || x.size(2) != cfg_.features) {
    throw DimensionError("encode expects [B, " + std::to_string(cfg_.seq_len) + ", " +
                         std::to_string(cfg_.features) + "], got " + ad::shape_str(x.shape()));
  }
  for (float v : x.data()) {
    if (!std::isfinite(v)) throw DataError("encode: non-finite input");
  }
  auto h = enc_in_(tape, ad::transpose12(tape, x));
  for (const auto& b : enc_blocks_) h = b(tape, h);
  h = enc_down_(tape, ad::silu(tape, h));
  h = enc_out_(tape, ad::silu(tape, h));
  if (h.size(2) != cfg_.latent_len()) throw DimensionError("encoder produced the wrong latent length");
  h = ad::transpose12(tape, h);
  return ad::l2_normalize(tape, h, cfg_.code_dim);
}

Tensor<float> Tokenizer::decode(Tape<float>& tape, const Tensor<float>& h) const {
  if (h.rank() != 3 || h.size(1) != cfg_.latent_len() || h.size(2) != cfg_.code_dim) {
    throw DimensionError("decode expects [B, " + std::to_string(cfg_.latent_len()) + ", " +
                         std::to_string(cfg_.code_dim) + "], got " + ad::shape_str(h.shape()));
  }
  auto y = dec_in_(tape, ad::transpose12(tape, h));
  y = dec_up_(tape, ad::upsample_repeat(tape, y, cfg_.downsample));
  for (const auto& b : dec_blocks_) y = b(tape, y);
  y = dec_out_(tape, ad::silu(tape, y));
  return ad::transpose12(tape, y);
}

std::vector<float> Tokenizer::encode_windows(std::span<const float> windows, std::size_t n) const {
  const std::size_t w = cfg_.seq_len * cfg_.features;
  const std::size_t lat = cfg_.latent_len() * cfg_.code_dim;
  if (windows.size() != n * w) throw DimensionError("encode_windows: buffer does not hold n windows");
  std::vector<float> out(n * lat);
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t b = std::min(kEvalBatch, n - start);
    Tape<float> tape(false);
    Tensor<float> x({b, cfg_.seq_len, cfg_.features},
                    std::vector<float>(windows.begin() + start * w, windows.begin() + (start + b) * w));
    auto h = encode(tape, x);
    std::copy(h.data().begin(), h.data().end(), out.begin() + start * lat);
  }
  return out;
}

std::vector<float> Tokenizer::decode_latents(std::span<const float> latents, std::size_t n) const {
  const std::size_t w = cfg_.seq_len * cfg_.features;
  const std::size_t lat = cfg_.latent_len() * cfg_.code_dim;
  if (latents.size() != n * lat) throw DimensionError("decode_latents: buffer does not hold n sequences");
  std::vector<float> out(n * w);
  for (std::size_t start = 0; start < n; start += kEvalBatch) {
    const std::size_t b = std::min(kEvalBatch, n - start);
    Tape<float> tape(false);
    Tensor<float> h({b, cfg_.latent_len(), cfg_.code_dim},
                    std::vector<float>(latents.begin() + start * lat, latents.begin() + (start + b) * lat));
    auto y = decode(tape, h);
    std::copy(y.data().begin(), y.data().end(), out.begin() + start * w);
  }
  return out;
}

std::vector<int> Tokenizer::tokenize(std::span<const float> windows, std::size_t n) const {
  return quantize_rows(encode_windows(windows, n), codebook_);
}

std::vector<float> Tokenizer::detokenize(std::span<const int> tokens, std::size_t n) const {
  if (tokens.size() != n * cfg_.latent_len()) throw DimensionError("detokenize: token count mismatch");
  return decode_latents(dequantize(tokens, codebook_), n);
}

ad::ParamList<float> Tokenizer::parameters() const {
  ad::ParamList<float> p;
  enc_in_.collect("vq.enc_in", p);
  for (std::size_t i = 0; i < enc_blocks_.size(); ++i) enc_blocks_[i].collect("vq.enc_block" + std::to_string(i), p);
  enc_down_.collect("vq.enc_down", p);
  enc_out_.collect("vq.enc_out", p);
  dec_in_.collect("vq.dec_in", p);
  dec_up_.collect("vq.dec_up", p);
  for (std::size_t i = 0; i < dec_blocks_.size(); ++i) dec_blocks_[i].collect("vq.dec_block" + std::to_string(i), p);
  dec_out_.collect("vq.dec_out", p);
  return p;
}

void Tokenizer::save(data::Checkpoint& ckpt) const {
  cfg_.to_config(ckpt.config);
  const auto params = parameters();
  for (const auto& [name, t] : params.entries()) ckpt.add(name, t);
  const auto& cb = codebook_;
  ckpt.add("vq.codebook.codes", {cb.size, cb.dim}, cb.codes);
  ckpt.add("vq.codebook.ema_cluster_size", {cb.size},
           std::vector<float>(cb.ema_cluster_size.begin(), cb.ema_cluster_size.end()));
  ckpt.add("vq.codebook.ema_embed_sum", {cb.size, cb.dim},
           std::vector<float>(cb.ema_embed_sum.begin(), cb.ema_embed_sum.end()));
}

Tokenizer Tokenizer::load(const data::Checkpoint& ckpt) {
  const VqConfig cfg = VqConfig::from_config(ckpt.config);
  Rng scratch(0);
  Tokenizer tok(cfg, scratch);
  const auto params = tok.parameters();
  for (const auto& [name, t] : params.entries()) {
    auto handle = t;
    ckpt.restore(name, handle);
  }
  const auto& codes = ckpt.get("vq.codebook.codes");
  if (codes.shape != ad::Shape{cfg.codebook_size, cfg.code_dim}) throw LoadError("codebook shape mismatch");
  tok.codebook_.codes = codes.values;
  const auto& sizes = ckpt.get("vq.codebook.ema_cluster_size").values;
  const auto& sums = ckpt.get("vq.codebook.ema_embed_sum").values;
  tok.codebook_.ema_cluster_size.assign(sizes.begin(), sizes.end());
  tok.codebook_.ema_embed_sum.assign(sums.begin(), sums.end());
  return tok;
}

Tensor<float> vq_loss(Tape<float>& tape, const Tensor<float>& x, const Tensor<float>& x_rec, const Tensor<float>& h,
                      const Tensor<float>& h_tilde, double lambda) {
  if (h.shape() != h_tilde.shape() || h.rank() != 3) throw DimensionError("vq_loss: latent shape mismatch");
  const double rows = static_cast<double>(h.size(0) * h.size(1));  // B * L
  // The embedding term sees h̃ as a constant (stop-gradient).
  auto target = h_tilde.clone();
  auto cos_sum = ad::sum(tape, ad::mul(tape, h, target));
  auto embed = ad::add_scalar(tape, ad::scale(tape, cos_sum, static_cast<float>(-lambda / rows)),
                              static_cast<float>(lambda));
  return ad::add(tape, ad::mse(tape, x_rec, x), embed);
}

VqTrainResult train_vqvae(const data::WindowedDataset& train, const VqConfig& config, const VqTrainOptions& opts,
                          const std::function<void(const VqEpochLog&)>& on_epoch) {
  config.validate();
  if (train.size() == 0) throw DataError("train_vqvae: empty dataset");
  if (train.seq_len != config.seq_len || train.features != config.features) {
    throw ConfigError("dataset windows [" + std::to_string(train.seq_len) + ", " + std::to_string(train.features) +
                      "] do not match vq config");
  }
  if (opts.batch_size == 0) throw ConfigError("batch_size must be positive");
  ScopedFlushDenormals ftz;
  Rng rng(opts.seed);
  Rng init = rng.derive(1), shuffle = rng.derive(2), reset = rng.derive(3);
  VqTrainResult result{Tokenizer(config, init), {}};
  Tokenizer& tok = result.tokenizer;
  auto params = tok.parameters().tensors();
  ad::Adam<float> adam(params, {.lr = opts.lr});

  const std::size_t n = train.size();
  const std::size_t w = train.window_numel();
  const std::size_t L = config.latent_len();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<float> donors;

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle.engine());
    double loss_sum = 0.0, mse_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += opts.batch_size) {
      const std::size_t b = std::min(opts.batch_size, n - start);
      std::vector<float> xb(b * w);
      for (std::size_t i = 0; i < b; ++i) {
        auto win = train.window(order[start + i]);
        std::copy(win.begin(), win.end(), xb.begin() + i * w);
      }
      Tensor<float> x({b, config.seq_len, config.features}, std::move(xb));
      Tape<float> tape;
      adam.zero_grad();
      auto h = tok.encode(tape, x);
      const auto idx = quantize_rows(h.data(), tok.codebook());
      Tensor<float> h_tilde({b, L, config.code_dim}, dequantize(idx, tok.codebook()));
      auto x_rec = tok.decode(tape, ad::straight_through(tape, h, h_tilde));
      auto loss = vq_loss(tape, x, x_rec, h, h_tilde, config.lambda_embed);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw DivergenceError("vq training diverged at epoch " + std::to_string(epoch) + " (loss " +
                              std::to_string(lv) + ")");
      }
      Tape<float> probe(false);
      mse_sum += ad::mse(probe, x_rec, x).item();
      tape.backward(loss);
      adam.step();
      ema_update(tok.codebook(), h.data(), idx, config.ema_decay);
      donors.assign(h.data().begin(), h.data().end());
      loss_sum += lv;
      ++batches;
    }
    VqEpochLog entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / static_cast<double>(batches);
    entry.recon_mse = mse_sum / static_cast<double>(batches);
    entry.utilization =
        static_cast<double>(tok.codebook().utilization_count()) / static_cast<double>(config.codebook_size);
    entry.codes_reset = reset_inactive_codes(tok.codebook(), donors, config.reset_threshold, reset);
    result.log.push_back(entry);
    log::debug("vq epoch " + std::to_string(epoch) + " loss " + std::to_string(entry.loss) + " mse " +
               std::to_string(entry.recon_mse) + " util " + std::to_string(entry.utilization));
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

ReconstructionReport evaluate_reconstruction(const Tokenizer& tok, const data::WindowedDataset& ds) {
  const std::size_t n = ds.size();
  const auto tokens = tok.tokenize(ds.windows, n);
  const auto rec = tok.detokenize(tokens, n);
  double se = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const double d = static_cast<double>(rec[i]) - ds.windows[i];
    se += d * d;
  }
  std::vector<char> used(tok.config().codebook_size, 0);
  for (int t : tokens) used[static_cast<std::size_t>(t)] = 1;
  ReconstructionReport r;
  r.mse = se / static_cast<double>(rec.size());
  r.utilization = static_cast<double>(std::count(used.begin(), used.end(), 1)) /
                  static_cast<double>(used.size());
  return r;
}

}  // namespace sdflow::vq
