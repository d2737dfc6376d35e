// Copyright 2026 The SDFlow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "sdflow/autodiff/tensor.hpp"

namespace sdflow::ad {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamOptions options) : params_(std::move(params)), opts_(options) {
    if (!(opts_.lr > 0) || !(opts_.beta1 > 0 && opts_.beta1 < 1) || !(opts_.beta2 > 0 && opts_.beta2 < 1) ||
        !(opts_.eps > 0)) {
      throw ParameterError("invalid Adam options");
    }
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.grad();  // allocate on first use
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    for (const auto& p : params_) {
      if (!p.has_grad()) throw ContractError("adam step on a parameter without gradient");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto data = params_[i].data();
      auto g = params_[i].grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gj;
        v[j] = opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gj * gj;
        const double mhat = m[j] / c1;
        const double vhat = v[j] / c2;
        data[j] = static_cast<T>(static_cast<double>(data[j]) - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    }
  }

  std::size_t steps() const { return step_; }
  const AdamOptions& options() const { return opts_; }
  void set_lr(double lr) { opts_.lr = lr; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace sdflow::ad
