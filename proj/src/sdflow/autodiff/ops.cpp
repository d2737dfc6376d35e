// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#include "sdflow/autodiff/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace sdflow::ad {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

[[noreturn]] void dim_error(const char* op, const std::string& detail) {
  throw DimensionError(std::string(op) + ": " + detail);
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    dim_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const std::vector<T>& delta) {
  auto g = dst.grad();
  for (std::size_t i = 0; i < delta.size(); ++i) g[i] += delta[i];
}

// Output tensor flagged for tracking when the tape will record the op.
template <typename T, typename... Ins>
Tensor<T> make_output(Tape<T>& tape, Shape shape, const Ins&... inputs) {
  Tensor<T> out(std::move(shape));
  if (tape.tracks(inputs...)) out.set_requires_grad(true);
  return out;
}

}  // namespace

// ---- linear algebra --------------------------------------------------------

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(0)) {
    dim_error("matmul", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.size(0));
  const auto k = static_cast<Eigen::Index>(a.size(1));
  const auto n = static_cast<Eigen::Index>(b.size(1));
  auto out = make_output(tape, {a.size(0), b.size(1)}, a, b);
  MatMap<T>(out.ptr(), m, n).noalias() = ConstMatMap<T>(a.ptr(), m, k) * ConstMatMap<T>(b.ptr(), k, n);
  if (out.requires_grad()) {
    tape.record("matmul", [a, b, out, m, k, n]() mutable {
      ConstMatMap<T> g(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MatMap<T>(a.grad().data(), m, k).noalias() += g * ConstMatMap<T>(b.ptr(), k, n).transpose();
      }
      if (b.requires_grad()) {
        MatMap<T>(b.grad().data(), k, n).noalias() += ConstMatMap<T>(a.ptr(), m, k).transpose() * g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_nt(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.size(1) != b.size(1)) {
    dim_error("matmul_nt", shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  const auto m = static_cast<Eigen::Index>(a.size(0));
  const auto k = static_cast<Eigen::Index>(a.size(1));
  const auto n = static_cast<Eigen::Index>(b.size(0));
  auto out = make_output(tape, {a.size(0), b.size(0)}, a, b);
  MatMap<T>(out.ptr(), m, n).noalias() =
      ConstMatMap<T>(a.ptr(), m, k) * ConstMatMap<T>(b.ptr(), n, k).transpose();
  if (out.requires_grad()) {
    tape.record("matmul_nt", [a, b, out, m, k, n]() mutable {
      ConstMatMap<T> g(out.grad().data(), m, n);
      if (a.requires_grad()) {
        MatMap<T>(a.grad().data(), m, k).noalias() += g * ConstMatMap<T>(b.ptr(), n, k);
      }
      if (b.requires_grad()) {
        MatMap<T>(b.grad().data(), n, k).noalias() += g.transpose() * ConstMatMap<T>(a.ptr(), m, k);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.size(0) != b.size(0) ||
      a.size(2) != (transpose_b ? b.size(2) : b.size(1))) {
    dim_error("bmm", shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t batch = a.size(0);
  const auto m = static_cast<Eigen::Index>(a.size(1));
  const auto k = static_cast<Eigen::Index>(a.size(2));
  const auto n = static_cast<Eigen::Index>(transpose_b ? b.size(1) : b.size(2));
  auto out = make_output(tape, {batch, a.size(1), static_cast<std::size_t>(n)}, a, b);
  const std::size_t sa = a.size(1) * a.size(2), sb = b.size(1) * b.size(2),
                    so = a.size(1) * static_cast<std::size_t>(n);
  for (std::size_t i = 0; i < batch; ++i) {
    ConstMatMap<T> am(a.ptr() + i * sa, m, k);
    MatMap<T> om(out.ptr() + i * so, m, n);
    if (transpose_b) {
      om.noalias() = am * ConstMatMap<T>(b.ptr() + i * sb, n, k).transpose();
    } else {
      om.noalias() = am * ConstMatMap<T>(b.ptr() + i * sb, k, n);
    }
  }
  if (out.requires_grad()) {
    tape.record("bmm", [a, b, out, batch, m, k, n, sa, sb, so, transpose_b]() mutable {
      const T* gp = out.grad().data();
      T* ga = a.requires_grad() ? a.grad().data() : nullptr;
      T* gb = b.requires_grad() ? b.grad().data() : nullptr;
      for (std::size_t i = 0; i < batch; ++i) {
        ConstMatMap<T> g(gp + i * so, m, n);
        ConstMatMap<T> am(a.ptr() + i * sa, m, k);
        if (transpose_b) {
          ConstMatMap<T> bm(b.ptr() + i * sb, n, k);
          if (ga) MatMap<T>(ga + i * sa, m, k).noalias() += g * bm;
          if (gb) MatMap<T>(gb + i * sb, n, k).noalias() += g.transpose() * am;
        } else {
          ConstMatMap<T> bm(b.ptr() + i * sb, k, n);
          if (ga) MatMap<T>(ga + i * sa, m, k).noalias() += g * bm.transpose();
          if (gb) MatMap<T>(gb + i * sb, k, n).noalias() += am.transpose() * g;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  if (w.rank() != 2 || x.rank() < 1 || x.shape().back() != w.size(0)) {
    dim_error("linear", shape_str(x.shape()) + " with weight " + shape_str(w.shape()));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != w.size(1))) {
    dim_error("linear", "bias " + shape_str(bias.shape()) + " for weight " + shape_str(w.shape()));
  }
  const auto in = static_cast<Eigen::Index>(w.size(0));
  const auto outd = static_cast<Eigen::Index>(w.size(1));
  const auto rows = static_cast<Eigen::Index>(x.numel() / w.size(0));
  Shape shape = x.shape();
  shape.back() = w.size(1);
  auto out = make_output(tape, shape, x, w, bias);
  MatMap<T> om(out.ptr(), rows, outd);
  om.noalias() = ConstMatMap<T>(x.ptr(), rows, in) * ConstMatMap<T>(w.ptr(), in, outd);
  if (bias.defined()) {
    om.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.ptr(), outd);
  }
  if (out.requires_grad()) {
    tape.record("linear", [x, w, bias, out, rows, in, outd]() mutable {
      ConstMatMap<T> g(out.grad().data(), rows, outd);
      if (x.requires_grad()) {
        MatMap<T>(x.grad().data(), rows, in).noalias() += g * ConstMatMap<T>(w.ptr(), in, outd).transpose();
      }
      if (w.requires_grad()) {
        MatMap<T>(w.grad().data(), in, outd).noalias() += ConstMatMap<T>(x.ptr(), rows, in).transpose() * g;
      }
      if (bias.requires_grad()) {
        // Sequential row order: Eigen's vectorized reductions split by pointer alignment.
        T* gb = bias.grad().data();
        const T* gp = out.grad().data();
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index o = 0; o < outd; ++o) gb[o] += gp[r * outd + o];
      }
    });
  }
  return out;
}

namespace {

// cols[(c*k + j), b*t_out + o] = x[b, c, o*stride + j - padding]
template <typename T>
void im2col(const T* x, std::size_t batch, std::size_t cin, std::size_t len, std::size_t k,
            std::size_t stride, std::size_t padding, std::size_t t_out, T* cols) {
  const std::size_t width = batch * t_out;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      T* row = cols + (c * k + j) * width;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* xs = x + (b * cin + c) * len;
        for (std::size_t o = 0; o < t_out; ++o) {
          const long pos = static_cast<long>(o * stride + j) - static_cast<long>(padding);
          row[b * t_out + o] = (pos >= 0 && pos < static_cast<long>(len)) ? xs[pos] : T(0);
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, std::size_t batch, std::size_t cin, std::size_t len, std::size_t k,
            std::size_t stride, std::size_t padding, std::size_t t_out, T* dx) {
  const std::size_t width = batch * t_out;
  for (std::size_t c = 0; c < cin; ++c) {
    for (std::size_t j = 0; j < k; ++j) {
      const T* row = cols + (c * k + j) * width;
      for (std::size_t b = 0; b < batch; ++b) {
        T* xs = dx + (b * cin + c) * len;
        for (std::size_t o = 0; o < t_out; ++o) {
          const long pos = static_cast<long>(o * stride + j) - static_cast<long>(padding);
          if (pos >= 0 && pos < static_cast<long>(len)) xs[pos] += row[b * t_out + o];
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv1d(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t padding) {
  if (x.rank() != 2 && x.rank() != 3) dim_error("conv1d", "input must be [C,T] or [B,C,T]");
  if (w.rank() != 3) dim_error("conv1d", "weight must be [C_out, C_in, k]");
  if (stride == 0) throw ParameterError("conv1d: stride must be positive");
  const bool batched = x.rank() == 3;
  const std::size_t batch = batched ? x.size(0) : 1;
  const std::size_t cin = x.size(batched ? 1 : 0);
  const std::size_t len = x.size(batched ? 2 : 1);
  const std::size_t cout = w.size(0), k = w.size(2);
  if (w.size(1) != cin) {
    dim_error("conv1d", "input channels " + std::to_string(cin) + " vs weight " + shape_str(w.shape()));
  }
  if (len + 2 * padding < k) {
    dim_error("conv1d", "kernel " + std::to_string(k) + " larger than padded input " +
                            std::to_string(len + 2 * padding));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.size(0) != cout)) dim_error("conv1d", "bias shape");
  const std::size_t t_out = (len + 2 * padding - k) / stride + 1;
  const std::size_t width = batch * t_out;

  std::vector<T> cols(cin * k * width);
  im2col(x.ptr(), batch, cin, len, k, stride, padding, t_out, cols.data());
  RowMat<T> y = ConstMatMap<T>(w.ptr(), cout, cin * k) * ConstMatMap<T>(cols.data(), cin * k, width);

  Shape shape = batched ? Shape{batch, cout, t_out} : Shape{cout, t_out};
  auto out = make_output(tape, shape, x, w, bias);
  T* op = out.ptr();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout; ++co) {
      const T bv = bias.defined() ? bias.ptr()[co] : T(0);
      for (std::size_t o = 0; o < t_out; ++o) op[(b * cout + co) * t_out + o] = y(co, b * t_out + o) + bv;
    }
  }
  if (out.requires_grad()) {
    tape.record("conv1d", [x, w, bias, out, batch, cin, len, cout, k, stride, padding, t_out, width]() mutable {
      const T* gp = out.grad().data();
      RowMat<T> g(cout, width);
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t o = 0; o < t_out; ++o) g(co, b * t_out + o) = gp[(b * cout + co) * t_out + o];
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t co = 0; co < cout; ++co) {
          T acc = 0;
          for (std::size_t j = 0; j < width; ++j) acc += g(co, j);
          gb[co] += acc;
        }
      }
      if (w.requires_grad()) {
        std::vector<T> cols(cin * k * width);
        im2col(x.ptr(), batch, cin, len, k, stride, padding, t_out, cols.data());
        MatMap<T>(w.grad().data(), cout, cin * k).noalias() +=
            g * ConstMatMap<T>(cols.data(), cin * k, width).transpose();
      }
      if (x.requires_grad()) {
        RowMat<T> dcols = ConstMatMap<T>(w.ptr(), cout, cin * k).transpose() * g;
        col2im(dcols.data(), batch, cin, len, k, stride, padding, t_out, x.grad().data());
      }
    });
  }
  return out;
}

// ---- elementwise -----------------------------------------------------------

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("add", a, b);
  auto out = make_output(tape, a.shape(), a, b);
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] + b.ptr()[i];
  if (out.requires_grad()) {
    tape.record("add", [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) { auto ga = a.grad(); for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; }
      if (b.requires_grad()) { auto gb = b.grad(); for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("sub", a, b);
  auto out = make_output(tape, a.shape(), a, b);
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] - b.ptr()[i];
  if (out.requires_grad()) {
    tape.record("sub", [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) { auto ga = a.grad(); for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; }
      if (b.requires_grad()) { auto gb = b.grad(); for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mul", a, b);
  auto out = make_output(tape, a.shape(), a, b);
  for (std::size_t i = 0; i < a.numel(); ++i) out.ptr()[i] = a.ptr()[i] * b.ptr()[i];
  if (out.requires_grad()) {
    tape.record("mul", [a, b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) { auto ga = a.grad(); for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.ptr()[i]; }
      if (b.requires_grad()) { auto gb = b.grad(); for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.ptr()[i]; }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_bcast(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& y) {
  const auto& xs = x.shape();
  const auto& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<long>(ys.size()))) {
    dim_error("add_bcast", shape_str(ys) + " is not a trailing block of " + shape_str(xs));
  }
  const std::size_t block = y.numel();
  auto out = make_output(tape, xs, x, y);
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = x.ptr()[i] + y.ptr()[i % block];
  if (out.requires_grad()) {
    tape.record("add_bcast", [x, y, out, block]() mutable {
      auto g = out.grad();
      if (x.requires_grad()) { auto gx = x.grad(); for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i]; }
      if (y.requires_grad()) { auto gy = y.grad(); for (std::size_t i = 0; i < g.size(); ++i) gy[i % block] += g[i]; }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(Tape<T>& tape, const Tensor<T>& x, T factor) {
  auto out = make_output(tape, x.shape(), x);
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = x.ptr()[i] * factor;
  if (out.requires_grad()) {
    tape.record("scale", [x, out, factor]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * factor;
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_scalar(Tape<T>& tape, const Tensor<T>& x, T value) {
  auto out = make_output(tape, x.shape(), x);
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = x.ptr()[i] + value;
  if (out.requires_grad()) {
    tape.record("add_scalar", [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const T> coeffs) {
  if (x.rank() < 1 || coeffs.size() != x.size(0)) {
    dim_error("scale_rows", std::to_string(coeffs.size()) + " coefficients for " + shape_str(x.shape()));
  }
  const std::size_t block = x.numel() / x.size(0);
  std::vector<T> c(coeffs.begin(), coeffs.end());
  auto out = make_output(tape, x.shape(), x);
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = x.ptr()[i] * c[i / block];
  if (out.requires_grad()) {
    tape.record("scale_rows", [x, out, c = std::move(c), block]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * c[i / block];
    });
  }
  return out;
}

template <typename T>
Tensor<T> silu(Tape<T>& tape, const Tensor<T>& x) {
  auto out = make_output(tape, x.shape(), x);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x.ptr()[i];
    out.ptr()[i] = v / (T(1) + std::exp(-v));
  }
  if (out.requires_grad()) {
    tape.record("silu", [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = x.ptr()[i];
        const T s = T(1) / (T(1) + std::exp(-v));
        gx[i] += g[i] * (s * (T(1) + v * (T(1) - s)));
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> abs(Tape<T>& tape, const Tensor<T>& x) {
  auto out = make_output(tape, x.shape(), x);
  for (std::size_t i = 0; i < x.numel(); ++i) out.ptr()[i] = std::abs(x.ptr()[i]);
  if (out.requires_grad()) {
    tape.record("abs", [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = x.ptr()[i];
        gx[i] += g[i] * (v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)));
      }
    });
  }
  return out;
}

// ---- normalization / attention helpers -------------------------------------

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, T eps) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.numel() / d;
  auto out = make_output(tape, x.shape(), x);
  std::vector<T> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    rstd[r] = T(1) / std::sqrt(var + eps);
    T* yr = out.ptr() + r * d;
    for (std::size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mu) * rstd[r];
  }
  if (out.requires_grad()) {
    tape.record("layer_norm", [x, out, rstd = std::move(rstd), d, rows]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.ptr() + r * d;
        const T* dy = g.data() + r * d;
        T mdy = 0, mdyy = 0;
        for (std::size_t j = 0; j < d; ++j) {
          mdy += dy[j];
          mdyy += dy[j] * y[j];
        }
        mdy /= T(d);
        mdyy /= T(d);
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += rstd[r] * (dy[j] - mdy - y[j] * mdyy);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> modulate(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& shift, const Tensor<T>& scale) {
  if (x.rank() != 3 || shift.rank() != 2 || scale.shape() != shift.shape() ||
      shift.size(0) != x.size(0) || shift.size(1) != x.size(2)) {
    dim_error("modulate", shape_str(x.shape()) + " with shift " + shape_str(shift.shape()) +
                              " scale " + shape_str(scale.shape()));
  }
  const std::size_t batch = x.size(0), n = x.size(1), d = x.size(2);
  auto out = make_output(tape, x.shape(), x, shift, scale);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        const std::size_t idx = (b * n + i) * d + j;
        out.ptr()[idx] = x.ptr()[idx] * (T(1) + scale.ptr()[b * d + j]) + shift.ptr()[b * d + j];
      }
  if (out.requires_grad()) {
    tape.record("modulate", [x, shift, scale, out, batch, n, d]() mutable {
      auto g = out.grad();
      T* gx = x.requires_grad() ? x.grad().data() : nullptr;
      T* gsh = shift.requires_grad() ? shift.grad().data() : nullptr;
      T* gsc = scale.requires_grad() ? scale.grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < d; ++j) {
            const std::size_t idx = (b * n + i) * d + j;
            if (gx) gx[idx] += g[idx] * (T(1) + scale.ptr()[b * d + j]);
            if (gsh) gsh[b * d + j] += g[idx];
            if (gsc) gsc[b * d + j] += g[idx] * x.ptr()[idx];
          }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(Tape<T>& tape, const Tensor<T>& x, T temperature) {
  if (!(temperature > T(0))) throw ParameterError("softmax: temperature must be positive");
  const std::size_t k = x.shape().back();
  const std::size_t rows = x.numel() / k;
  auto out = make_output(tape, x.shape(), x);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.ptr() + r * k;
    T* yr = out.ptr() + r * k;
    T mx = *std::max_element(xr, xr + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      yr[j] = std::exp((xr[j] - mx) / temperature);
      total += yr[j];
    }
    for (std::size_t j = 0; j < k; ++j) yr[j] /= total;
  }
  if (out.requires_grad()) {
    tape.record("softmax", [x, out, k, rows, temperature]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.ptr() + r * k;
        const T* dy = g.data() + r * k;
        T dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += dy[j] * y[j];
        for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += y[j] * (dy[j] - dot) / temperature;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const int> targets,
                        T temperature) {
  if (!(temperature > T(0))) throw ParameterError("cross_entropy: temperature must be positive");
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.numel() / k;
  if (targets.size() != rows) {
    dim_error("cross_entropy", std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  std::vector<int> tgt(targets.begin(), targets.end());
  for (int t : tgt) {
    if (t < 0 || static_cast<std::size_t>(t) >= k) {
      throw DataError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  std::vector<T> probs(logits.numel());
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.ptr() + r * k;
    T* p = probs.data() + r * k;
    const T mx = *std::max_element(z, z + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp((z[j] - mx) / temperature);
      total += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= total;
    const T lse = std::log(total);
    loss += lse - (z[tgt[r]] - mx) / temperature;
  }
  auto out = make_output(tape, {1}, logits);
  out.ptr()[0] = loss / T(rows);
  if (out.requires_grad()) {
    tape.record("cross_entropy", [logits, out, probs = std::move(probs), tgt = std::move(tgt), k, rows,
                                  temperature]() mutable {
      const T g = out.grad()[0] / (temperature * T(rows));
      auto gl = logits.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < k; ++j) {
          const T onehot = (static_cast<int>(j) == tgt[r]) ? T(1) : T(0);
          gl[r * k + j] += g * (probs[r * k + j] - onehot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& x, std::size_t group) {
  if (group == 0 || x.numel() % group != 0) {
    dim_error("l2_normalize", "group " + std::to_string(group) + " does not tile " + shape_str(x.shape()));
  }
  const std::size_t groups = x.numel() / group;
  auto out = make_output(tape, x.shape(), x);
  std::vector<T> norms(groups);
  for (std::size_t r = 0; r < groups; ++r) {
    const T* xr = x.ptr() + r * group;
    T s = 0;
    for (std::size_t j = 0; j < group; ++j) s += xr[j] * xr[j];
    norms[r] = std::max(std::sqrt(s), std::numeric_limits<T>::min());
    for (std::size_t j = 0; j < group; ++j) out.ptr()[r * group + j] = xr[j] / norms[r];
  }
  if (out.requires_grad()) {
    tape.record("l2_normalize", [x, out, norms = std::move(norms), group, groups]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < groups; ++r) {
        const T* y = out.ptr() + r * group;
        const T* dy = g.data() + r * group;
        T dot = 0;
        for (std::size_t j = 0; j < group; ++j) dot += y[j] * dy[j];
        for (std::size_t j = 0; j < group; ++j) gx[r * group + j] += (dy[j] - y[j] * dot) / norms[r];
      }
    });
  }
  return out;
}

// ---- shape -----------------------------------------------------------------

template <typename T>
Tensor<T> reshape(Tape<T>& tape, const Tensor<T>& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    dim_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  auto out = make_output(tape, std::move(shape), x);
  std::copy(x.ptr(), x.ptr() + x.numel(), out.ptr());
  if (out.requires_grad()) {
    tape.record("reshape", [x, out]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose12(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 3) dim_error("transpose12", "needs rank 3, got " + shape_str(x.shape()));
  const std::size_t batch = x.size(0), a = x.size(1), b = x.size(2);
  auto out = make_output(tape, {batch, b, a}, x);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t i = 0; i < a; ++i)
      for (std::size_t j = 0; j < b; ++j) out.ptr()[(n * b + j) * a + i] = x.ptr()[(n * a + i) * b + j];
  if (out.requires_grad()) {
    tape.record("transpose12", [x, out, batch, a, b]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t i = 0; i < a; ++i)
          for (std::size_t j = 0; j < b; ++j) gx[(n * a + i) * b + j] += g[(n * b + j) * a + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> narrow(Tape<T>& tape, const Tensor<T>& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.size(axis)) {
    dim_error("narrow", "axis " + std::to_string(axis) + " [" + std::to_string(start) + ", +" +
                            std::to_string(length) + ") of " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.size(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.size(i);
  const std::size_t extent = x.size(axis);
  Shape shape = x.shape();
  shape[axis] = length;
  auto out = make_output(tape, shape, x);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.ptr() + (o * extent + start) * inner, length * inner, out.ptr() + o * length * inner);
  if (out.requires_grad()) {
    tape.record("narrow", [x, out, outer, inner, extent, start, length]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < length * inner; ++i) gx[(o * extent + start) * inner + i] += g[o * length * inner + i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b, std::size_t axis) {
  if (a.rank() != b.rank() || axis >= a.rank()) dim_error("concat", "rank mismatch");
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.size(i) != b.size(i)) {
      dim_error("concat", shape_str(a.shape()) + " with " + shape_str(b.shape()));
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.size(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.size(i);
  const std::size_t ea = a.size(axis) * inner, eb = b.size(axis) * inner;
  Shape shape = a.shape();
  shape[axis] += b.size(axis);
  auto out = make_output(tape, shape, a, b);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.ptr() + o * ea, ea, out.ptr() + o * (ea + eb));
    std::copy_n(b.ptr() + o * eb, eb, out.ptr() + o * (ea + eb) + ea);
  }
  if (out.requires_grad()) {
    tape.record("concat", [a, b, out, outer, ea, eb]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < ea; ++i) ga[o * ea + i] += g[o * (ea + eb) + i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t o = 0; o < outer; ++o)
          for (std::size_t i = 0; i < eb; ++i) gb[o * eb + i] += g[o * (ea + eb) + ea + i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> upsample_repeat(Tape<T>& tape, const Tensor<T>& x, std::size_t factor) {
  if (x.rank() != 3 || factor == 0) dim_error("upsample_repeat", "needs [B,C,T] and factor >= 1");
  const std::size_t rows = x.size(0) * x.size(1), len = x.size(2);
  auto out = make_output(tape, {x.size(0), x.size(1), len * factor}, x);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < len * factor; ++t) out.ptr()[r * len * factor + t] = x.ptr()[r * len + t / factor];
  if (out.requires_grad()) {
    tape.record("upsample_repeat", [x, out, rows, len, factor]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len * factor; ++t) gx[r * len + t / factor] += g[r * len * factor + t];
    });
  }
  return out;
}

template <typename T>
Tensor<T> split_heads(Tape<T>& tape, const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.size(2) % heads != 0) {
    throw ConfigError("split_heads: width " + std::to_string(x.rank() == 3 ? x.size(2) : 0) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t batch = x.size(0), n = x.size(1), dh = x.size(2) / heads;
  auto out = make_output(tape, {batch * heads, n, dh}, x);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(x.ptr() + (b * n + i) * heads * dh + h * dh, dh, out.ptr() + ((b * heads + h) * n + i) * dh);
  if (out.requires_grad()) {
    tape.record("split_heads", [x, out, batch, n, heads, dh]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < dh; ++j)
              gx[(b * n + i) * heads * dh + h * dh + j] += g[((b * heads + h) * n + i) * dh + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> merge_heads(Tape<T>& tape, const Tensor<T>& x, std::size_t heads) {
  if (x.rank() != 3 || heads == 0 || x.size(0) % heads != 0) dim_error("merge_heads", shape_str(x.shape()));
  const std::size_t batch = x.size(0) / heads, n = x.size(1), dh = x.size(2);
  auto out = make_output(tape, {batch, n, heads * dh}, x);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads; ++h)
        std::copy_n(x.ptr() + ((b * heads + h) * n + i) * dh, dh, out.ptr() + (b * n + i) * heads * dh + h * dh);
  if (out.requires_grad()) {
    tape.record("merge_heads", [x, out, batch, n, heads, dh]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t j = 0; j < dh; ++j)
              gx[((b * heads + h) * n + i) * dh + j] += g[(b * n + i) * heads * dh + h * dh + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::size_t> rows) {
  if (x.rank() < 1 || rows.empty()) dim_error("gather_rows", "empty selection");
  const std::size_t block = x.numel() / x.size(0);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  for (std::size_t r : idx) {
    if (r >= x.size(0)) throw DataError("gather_rows: row " + std::to_string(r) + " out of range");
  }
  Shape shape = x.shape();
  shape[0] = idx.size();
  auto out = make_output(tape, shape, x);
  for (std::size_t i = 0; i < idx.size(); ++i) std::copy_n(x.ptr() + idx[i] * block, block, out.ptr() + i * block);
  if (out.requires_grad()) {
    tape.record("gather_rows", [x, out, idx = std::move(idx), block]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < block; ++j) gx[idx[i] * block + j] += g[i * block + j];
    });
  }
  return out;
}

template <typename T>
Tensor<T> straight_through(Tape<T>& tape, const Tensor<T>& latent, const Tensor<T>& quantized) {
  require_same_shape("straight_through", latent, quantized);
  auto out = make_output(tape, latent.shape(), latent);
  std::copy(quantized.ptr(), quantized.ptr() + quantized.numel(), out.ptr());
  if (out.requires_grad()) {
    tape.record("straight_through", [latent, out]() mutable {
      auto g = out.grad();
      auto gl = latent.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gl[i] += g[i];
    });
  }
  return out;
}

// ---- reductions ------------------------------------------------------------

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& x) {
  auto out = make_output(tape, {1}, x);
  T s = 0;
  for (T v : x.data()) s += v;
  out.ptr()[0] = s;
  if (out.requires_grad()) {
    tape.record("sum", [x, out]() mutable {
      const T g = out.grad()[0];
      for (T& v : x.grad()) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(Tape<T>& tape, const Tensor<T>& x) {
  return scale(tape, sum(tape, x), T(1) / T(x.numel()));
}

template <typename T>
Tensor<T> sum_sq(Tape<T>& tape, const Tensor<T>& x) {
  auto out = make_output(tape, {1}, x);
  T s = 0;
  for (T v : x.data()) s += v * v;
  out.ptr()[0] = s;
  if (out.requires_grad()) {
    tape.record("sum_sq", [x, out]() mutable {
      const T g = out.grad()[0];
      auto gx = x.grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T(2) * g * x.ptr()[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mse(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape("mse", a, b);
  auto out = make_output(tape, {1}, a, b);
  const std::size_t n = a.numel();
  T s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T d = a.ptr()[i] - b.ptr()[i];
    s += d * d;
  }
  out.ptr()[0] = s / T(n);
  if (out.requires_grad()) {
    tape.record("mse", [a, b, out, n]() mutable {
      const T g = T(2) * out.grad()[0] / T(n);
      T* ga = a.requires_grad() ? a.grad().data() : nullptr;
      T* gb = b.requires_grad() ? b.grad().data() : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = a.ptr()[i] - b.ptr()[i];
        if (ga) ga[i] += g * d;
        if (gb) gb[i] -= g * d;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_rows(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() != 2) dim_error("mean_rows", "needs [M, r], got " + shape_str(x.shape()));
  const std::size_t m = x.size(0), r = x.size(1);
  auto out = make_output(tape, {r}, x);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < r; ++j) out.ptr()[j] += x.ptr()[i * r + j];
  for (std::size_t j = 0; j < r; ++j) out.ptr()[j] /= T(m);
  if (out.requires_grad()) {
    tape.record("mean_rows", [x, out, m, r]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < r; ++j) gx[i * r + j] += g[j] / T(m);
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean_last(Tape<T>& tape, const Tensor<T>& x) {
  if (x.rank() < 2) dim_error("mean_last", "needs rank >= 2");
  const std::size_t len = x.shape().back();
  const std::size_t rows = x.numel() / len;
  Shape shape(x.shape().begin(), x.shape().end() - 1);
  auto out = make_output(tape, shape, x);
  for (std::size_t r = 0; r < rows; ++r) {
    T s = 0;
    for (std::size_t t = 0; t < len; ++t) s += x.ptr()[r * len + t];
    out.ptr()[r] = s / T(len);
  }
  if (out.requires_grad()) {
    tape.record("mean_last", [x, out, rows, len]() mutable {
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < len; ++t) gx[r * len + t] += g[r] / T(len);
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_std(Tape<T>& tape, const Tensor<T>& x) {
  const std::size_t n = x.numel();
  T mu = 0;
  for (T v : x.data()) mu += v;
  mu /= T(n);
  T var = 0;
  for (T v : x.data()) var += (v - mu) * (v - mu);
  var /= T(n);
  const T sd = std::sqrt(var);
  auto out = make_output(tape, {1}, x);
  out.ptr()[0] = sd;
  if (out.requires_grad()) {
    tape.record("global_std", [x, out, mu, sd, n]() mutable {
      if (sd == T(0)) return;
      const T g = out.grad()[0] / (T(n) * sd);
      auto gx = x.grad();
      for (std::size_t i = 0; i < n; ++i) gx[i] += g * (x.ptr()[i] - mu);
    });
  }
  return out;
}

#define SDFLOW_INSTANTIATE_OPS(T)                                                                    \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul_nt(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> bmm(Tape<T>&, const Tensor<T>&, const Tensor<T>&, bool);                         \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);         \
  template Tensor<T> conv1d(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                            std::size_t, std::size_t);                                               \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> sub(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> add_bcast(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> scale(Tape<T>&, const Tensor<T>&, T);                                           \
  template Tensor<T> add_scalar(Tape<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> scale_rows(Tape<T>&, const Tensor<T>&, std::span<const T>);                     \
  template Tensor<T> silu(Tape<T>&, const Tensor<T>&);                                               \
  template Tensor<T> abs(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> layer_norm(Tape<T>&, const Tensor<T>&, T);                                      \
  template Tensor<T> modulate(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
  template Tensor<T> softmax(Tape<T>&, const Tensor<T>&, T);                                         \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const int>, T);             \
  template Tensor<T> l2_normalize(Tape<T>&, const Tensor<T>&, std::size_t);                          \
  template Tensor<T> reshape(Tape<T>&, const Tensor<T>&, Shape);                                     \
  template Tensor<T> transpose12(Tape<T>&, const Tensor<T>&);                                        \
  template Tensor<T> narrow(Tape<T>&, const Tensor<T>&, std::size_t, std::size_t, std::size_t);       \
  template Tensor<T> concat(Tape<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t);              \
  template Tensor<T> upsample_repeat(Tape<T>&, const Tensor<T>&, std::size_t);                       \
  template Tensor<T> split_heads(Tape<T>&, const Tensor<T>&, std::size_t);                           \
  template Tensor<T> merge_heads(Tape<T>&, const Tensor<T>&, std::size_t);                           \
  template Tensor<T> gather_rows(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>);          \
  template Tensor<T> straight_through(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                                \
  template Tensor<T> mean(Tape<T>&, const Tensor<T>&);                                               \
  template Tensor<T> sum_sq(Tape<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mse(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> mean_rows(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> mean_last(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> global_std(Tape<T>&, const Tensor<T>&);

SDFLOW_INSTANTIATE_OPS(float)
SDFLOW_INSTANTIATE_OPS(double)

#undef SDFLOW_INSTANTIATE_OPS

}  // namespace sdflow::ad
