// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "sdflow/autodiff/ops.hpp"
#include "sdflow/common/rng.hpp"

namespace sdflow::ad {

// Ordered (name, tensor) list. Names are stable and become checkpoint keys.
template <typename T>
class ParamList {
 public:
  void add(std::string name, Tensor<T> t) { entries_.emplace_back(std::move(name), std::move(t)); }
  const std::vector<std::pair<std::string, Tensor<T>>>& entries() const { return entries_; }
  std::vector<Tensor<T>> tensors() const {
    std::vector<Tensor<T>> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.second);
    return out;
  }
  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape), true);
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool zero_init = false) {
    if (zero_init) {
      weight = Tensor<T>({in, out}, true);
      bias = Tensor<T>({out}, true);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(in));
      weight = uniform_param<T>({in, out}, bound, rng);
      bias = uniform_param<T>({out}, bound, rng);
    }
  }
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return linear(tape, x, weight, bias); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct Conv1d {
  Tensor<T> weight;  // [out, in, k]
  Tensor<T> bias;    // [out]
  std::size_t stride = 1;
  std::size_t padding = 0;

  Conv1d() = default;
  Conv1d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t padding_, Rng& rng)
      : stride(stride_), padding(padding_) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in * kernel));
    weight = uniform_param<T>({out, in, kernel}, bound, rng);
    bias = uniform_param<T>({out}, bound, rng);
  }
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    return conv1d(tape, x, weight, bias, stride, padding);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.add(prefix + ".weight", weight);
    out.add(prefix + ".bias", bias);
  }
};

// Two same-padded convolutions with a skip connection.
template <typename T>
struct ResBlock1d {
  Conv1d<T> conv1, conv2;

  ResBlock1d() = default;
  ResBlock1d(std::size_t channels, std::size_t kernel, Rng& rng)
      : conv1(channels, channels, kernel, 1, kernel / 2, rng), conv2(channels, channels, kernel, 1, kernel / 2, rng) {}
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    auto h = conv1(tape, silu(tape, x));
    h = conv2(tape, silu(tape, h));
    return add(tape, x, h);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    conv1.collect(prefix + ".conv1", out);
    conv2.collect(prefix + ".conv2", out);
  }
};

inline constexpr double kLayerNormEps = 1e-5;

// Adaptive layer norm: (1 + scale) * LN(x) + shift with (shift, scale)
// projected from a conditioning vector. The projection starts at zero so the
// modulation is neutral at initialization.
template <typename T>
struct AdaLayerNorm {
  Linear<T> proj;  // cond -> [shift | scale]
  std::size_t width = 0;

  AdaLayerNorm() = default;
  AdaLayerNorm(std::size_t cond_dim, std::size_t width_, Rng& rng)
      : proj(cond_dim, 2 * width_, rng, /*zero_init=*/true), width(width_) {}

  // x: [B, N, D]; cond: [B, cond_dim] (already passed through SiLU).
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& cond) const {
    auto params = proj(tape, cond);
    auto shift = narrow(tape, params, 1, 0, width);
    auto scl = narrow(tape, params, 1, width, width);
    return modulate(tape, layer_norm(tape, x, static_cast<T>(kLayerNormEps)), shift, scl);
  }
  void collect(const std::string& prefix, ParamList<T>& out) const { proj.collect(prefix + ".proj", out); }
};

template <typename T>
struct MultiHeadAttention {
  Linear<T> qkv, out;
  std::size_t heads = 1;
  std::size_t width = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width_, std::size_t heads_, Rng& rng)
      : qkv(width_, 3 * width_, rng), out(width_, width_, rng), heads(heads_), width(width_) {
    if (heads_ == 0 || width_ % heads_ != 0) {
      throw ConfigError("attention width " + std::to_string(width_) + " not divisible by " +
                        std::to_string(heads_) + " heads");
    }
  }

  // x: [B, N, D] -> [B, N, D]
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const {
    auto proj = qkv(tape, x);
    auto q = split_heads(tape, narrow(tape, proj, 2, 0, width), heads);
    auto k = split_heads(tape, narrow(tape, proj, 2, width, width), heads);
    auto v = split_heads(tape, narrow(tape, proj, 2, 2 * width, width), heads);
    const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(width / heads)));
    auto scores = scale(tape, bmm(tape, q, k, /*transpose_b=*/true), inv_sqrt);
    auto attn = softmax(tape, scores, T(1));
    auto ctx = merge_heads(tape, bmm(tape, attn, v, /*transpose_b=*/false), heads);
    return out(tape, ctx);
  }
  void collect(const std::string& prefix, ParamList<T>& out_list) const {
    qkv.collect(prefix + ".qkv", out_list);
    out.collect(prefix + ".out", out_list);
  }
};

template <typename T>
struct Mlp {
  Linear<T> fc1, fc2;

  Mlp() = default;
  Mlp(std::size_t width, std::size_t hidden, Rng& rng) : fc1(width, hidden, rng), fc2(hidden, width, rng) {}
  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x) const { return fc2(tape, silu(tape, fc1(tape, x))); }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    fc1.collect(prefix + ".fc1", out);
    fc2.collect(prefix + ".fc2", out);
  }
};

// Pre-norm transformer block with AdaLN time conditioning on both sublayers.
template <typename T>
struct AttentionBlock {
  AdaLayerNorm<T> norm1, norm2;
  MultiHeadAttention<T> attn;
  Mlp<T> mlp;

  AttentionBlock() = default;
  AttentionBlock(std::size_t width, std::size_t heads, std::size_t cond_dim, std::size_t mlp_ratio, Rng& rng)
      : norm1(cond_dim, width, rng), norm2(cond_dim, width, rng), attn(width, heads, rng),
        mlp(width, mlp_ratio * width, rng) {}

  Tensor<T> operator()(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& cond) const {
    auto h = add(tape, x, attn(tape, norm1(tape, x, cond)));
    return add(tape, h, mlp(tape, norm2(tape, h, cond)));
  }
  void collect(const std::string& prefix, ParamList<T>& out) const {
    norm1.collect(prefix + ".norm1", out);
    attn.collect(prefix + ".attn", out);
    norm2.collect(prefix + ".norm2", out);
    mlp.collect(prefix + ".mlp", out);
  }
};

}  // namespace sdflow::ad
