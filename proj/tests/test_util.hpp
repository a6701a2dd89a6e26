#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "lwfs/model.hpp"
#include "lwfs/rng.hpp"
#include "lwfs/tensor.hpp"

namespace lwfs::test {

template <typename T = double>
Tensor<T> randn(Shape shape, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(n(rng));
  return t;
}

template <typename T = double>
Tensor<T> randn(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return randn<T>(std::move(shape), rng, scale);
}

/// Worst per-coordinate relative error with denominator
/// max(|analytic|, |numeric|, 1e-8).
template <typename T>
double coordinate_rel_error(const Tensor<T>& analytic, const Tensor<T>& numeric) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = static_cast<double>(analytic[i]), n = static_cast<double>(numeric[i]);
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8}));
  }
  return worst;
}

/// Central differences of f with respect to every entry of `x`.
template <typename F>
Tensor<double> numeric_grad(F&& f, Tensor<double>& x, double h = 1e-6) {
  Tensor<double> g = Tensor<double>::zeros_like(x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline ModelSpec tiny_spec(std::size_t layers = 2) {
  ModelSpec s;
  s.input_dim = 6;
  s.num_layers = layers;
  s.block_hidden_dim = 5;
  s.block_out_dim = 4;
  s.proj_hidden = 6;
  s.proj_out = 4;
  s.pred_hidden = 6;
  return s;
}

/// Equal-size blocks: input_dim == block_out_dim.
inline ModelSpec equal_block_spec(std::size_t layers, std::size_t width = 4) {
  ModelSpec s;
  s.input_dim = width;
  s.num_layers = layers;
  s.block_hidden_dim = width + 1;
  s.block_out_dim = width;
  s.proj_hidden = 6;
  s.proj_out = 4;
  s.pred_hidden = 6;
  return s;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

template <typename T>
double max_abs_diff(const ParamGroup<T>& a, const ParamGroup<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) m = std::max(m, max_abs_diff(a.tensors[i].value, b.tensors[i].value));
  return m;
}

template <typename T>
double max_abs_diff(const ModelState<T>& a, const ModelState<T>& b) {
  const auto ga = a.groups();
  const auto gb = b.groups();
  double m = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) m = std::max(m, max_abs_diff(*ga[i], *gb[i]));
  return m;
}

}  // namespace lwfs::test
