// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "sdflow/autodiff/nn.hpp"
#include "sdflow/common/error.hpp"

namespace sdflow::flow {

struct NetShape {
  std::size_t latent_len = 6;     // L
  std::size_t code_dim = 64;      // d_c
  std::size_t codebook_size = 64; // K
  std::size_t d_model = 64;
  std::size_t layers = 1;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;

  std::size_t time_dim() const { return d_model / 4; }
  void validate() const {
    if (!latent_len || !code_dim || !codebook_size || !d_model || !layers || !heads || !mlp_ratio) {
      throw ConfigError("flow network sizes must be positive");
    }
    if (d_model % 8 != 0) throw ConfigError("d_model must be a multiple of 8");
    if (d_model % heads != 0) throw ConfigError("d_model not divisible by heads");
  }
};

// Sinusoidal features of 1000 t: [sin(1000 t f_i), cos(1000 t f_i)], dim even.
template <typename T>
ad::Tensor<T> time_features(std::span<const T> t, std::size_t dim) {
  const std::size_t half = dim / 2;
  ad::Tensor<T> out({t.size(), dim});
  auto o = out.data();
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double a = 1000.0 * static_cast<double>(t[b]) * f;
      o[b * dim + i] = static_cast<T>(std::sin(a));
      o[b * dim + half + i] = static_cast<T>(std::cos(a));
    }
  }
  return out;
}

// Transformer over the L latent positions plus one prepended global token,
// conditioned on t through adaptive layer norm. Outputs [B, L, K] logits.
template <typename T>
class FlowNet {
 public:
  FlowNet() = default;
  FlowNet(const NetShape& shape, Rng& rng) : shape_(shape) {
    shape_.validate();
    const std::size_t d = shape_.d_model;
    in_ = ad::Linear<T>(shape_.code_dim, d, rng);
    pos_ = ad::uniform_param<T>({shape_.latent_len, d}, 0.02, rng);
    global_ = ad::uniform_param<T>({1, d}, 0.02, rng);
    time1_ = ad::Linear<T>(shape_.time_dim(), d, rng);
    time2_ = ad::Linear<T>(d, d, rng);
    for (std::size_t i = 0; i < shape_.layers; ++i) blocks_.emplace_back(d, shape_.heads, d, shape_.mlp_ratio, rng);
    final_norm_ = ad::AdaLayerNorm<T>(d, d, rng);
    head_ = ad::Linear<T>(d, shape_.codebook_size, rng);
  }

  const NetShape& shape() const { return shape_; }

  // z: [B, L, d_c], t: B times -> [B, L, K]
  ad::Tensor<T> logits(ad::Tape<T>& tape, const ad::Tensor<T>& z, std::span<const T> t) const {
    const std::size_t L = shape_.latent_len, d = shape_.d_model;
    if (z.rank() != 3 || z.size(1) != L || z.size(2) != shape_.code_dim) {
      throw DimensionError("flow input must be [B, " + std::to_string(L) + ", " + std::to_string(shape_.code_dim) +
                           "]");
    }
    const std::size_t B = z.size(0);
    if (t.size() != B) throw DimensionError("flow input: one time per sample required");
    auto x = ad::add_bcast(tape, in_(tape, z), pos_);
    const std::vector<std::size_t> zeros(B, 0);
    auto g = ad::reshape(tape, ad::gather_rows(tape, global_, zeros), {B, 1, d});
    auto h = ad::concat(tape, g, x, 1);
    auto c = time2_(tape, ad::silu(tape, time1_(tape, time_features<T>(t, shape_.time_dim()))));
    auto cond = ad::silu(tape, c);
    for (const auto& blk : blocks_) h = blk(tape, h, cond);
    auto out = head_(tape, final_norm_(tape, h, cond));
    return ad::narrow(tape, out, 1, 1, L);
  }

  ad::ParamList<T> parameters() const {
    ad::ParamList<T> p;
    in_.collect("flow.in", p);
    p.add("flow.pos", pos_);
    p.add("flow.global", global_);
    time1_.collect("flow.time1", p);
    time2_.collect("flow.time2", p);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect("flow.block" + std::to_string(i), p);
    final_norm_.collect("flow.final_norm", p);
    head_.collect("flow.head", p);
    return p;
  }

 private:
  NetShape shape_;
  ad::Linear<T> in_, time1_, time2_, head_;
  ad::Tensor<T> pos_, global_;
  std::vector<ad::AttentionBlock<T>> blocks_;
  ad::AdaLayerNorm<T> final_norm_;
};

}  // namespace sdflow::flow
