// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>

#include "sdflow/autodiff/tensor.hpp"

// Differentiable primitives. Every op computes its forward result eagerly
// and, when the tape is recording and any input requires a gradient, records
// a closure that accumulates into the inputs' gradient buffers.
//
// Explicitly instantiated for float (training) and double (verification).
namespace sdflow::ad {

// ---- linear algebra --------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// [m,k] x [n,k]^T -> [m,n]
template <typename T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// Batched: [B,m,k] x [B,k,n] -> [B,m,n], or [B,m,k] x [B,n,k]^T when
// transpose_b is set.
template <typename T>
Tensor<T> bmm(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b);

// x[..., in] * w[in, out] + bias[out]; bias may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Cross-correlation. x is [C_in, T] or [B, C_in, T]; w is [C_out, C_in, k];
// bias is [C_out] or undefined. Output length floor((T + 2p - k)/stride) + 1.
template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding);

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// x + y where y's shape equals the trailing dims of x (repeated over the rest).
template <typename T>
Tensor<T> add_bcast(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y);

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor);
template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& x, T value);

// Multiplies each leading-axis slice x[b] by coeffs[b] (coeffs are constants).
template <typename T>
Tensor<T> scale_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const T> coeffs);

template <typename T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> abs(Tape<T>& tape, const Tensor<T>& x);

// ---- normalization / attention helpers -------------------------------------

// Normalizes over the last axis: (x - mean) / sqrt(var + eps), no affine.
template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, T eps);

// x[B,N,D] * (1 + scale[B,D]) + shift[B,D]
template <typename T>
Tensor<T> modulate(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& shift,
                   const Tensor<T>& scale);

// softmax(x / temperature) over the last axis.
template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, T temperature);

// Mean over rows of -log softmax(logits / temperature)[target].
// logits is [N, K] (or any shape whose last axis is K).
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets,
                        T temperature);

// Scales every consecutive group of `group` elements to unit l2 norm.
// group = last extent gives row normalization.
template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x, std::size_t group);

// ---- shape -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape);
// [B,a,b] -> [B,b,a]
template <typename T>
Tensor<T> transpose12(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> narrow(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t start,
                 std::size_t length);
template <typename T>
Tensor<T> concat(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, std::size_t axis);
// [B,C,T] -> [B,C,T*factor], each step repeated.
template <typename T>
Tensor<T> upsample_repeat(Tape<T>& tape, const Tensor<T>& x, std::size_t factor);
// [B,N,H*dh] -> [B*H,N,dh]
template <typename T>
Tensor<T> split_heads(Tape<T>& tape, const Tensor<T>& x, std::size_t heads);
// [B*H,N,dh] -> [B,N,H*dh]
template <typename T>
Tensor<T> merge_heads(Tape<T>& tape, const Tensor<T>& x, std::size_t heads);
// rows of x[M, ...] selected by index
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::size_t> rows);

// Forward value is `quantized`; the gradient flows to `latent` unchanged.
template <typename T>
Tensor<T> straight_through(Tape<T>& tape, const Tensor<T>& latent, const Tensor<T>& quantized);

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x);
template <typename T>
Tensor<T> sum_sq(Tape<T>& tape, const Tensor<T>& x);
// mean((a - b)^2) over all elements
template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);
// x[M, r] -> [r], mean over the leading axis
template <typename T>
Tensor<T> mean_rows(Tape<T>& tape, const Tensor<T>& x);
// x[B, C, T] -> [B, C], mean over the last axis
template <typename T>
Tensor<T> mean_last(Tape<T>& tape, const Tensor<T>& x);
// Population standard deviation over all entries, as a scalar.
template <typename T>
Tensor<T> global_std(Tape<T>& tape, const Tensor<T>& x);

}  // namespace sdflow::ad
