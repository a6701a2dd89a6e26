#include "lwfs/optim.hpp"

#include <cmath>
#include <numbers>

namespace lwfs {

template <typename T>
void AdamW<T>::step(std::span<const ParamUpdate<T>> params, double lr) {
  for (const auto& p : params) {
    if (p.value->shape() != p.grad->shape()) {
      throw DimensionError("adamw: gradient " + shape_str(p.grad->shape()) + " for parameter " + p.key + " " +
                           shape_str(p.value->shape()));
    }
    if (!p.grad->all_finite()) throw NumericError("adamw: non-finite gradient for " + p.key);
  }
  const T b1 = static_cast<T>(config_.beta1);
  const T b2 = static_cast<T>(config_.beta2);
  const T eps = static_cast<T>(config_.eps);
  const T lr_t = static_cast<T>(lr);
  const T decay = static_cast<T>(lr * config_.weight_decay);
  for (const auto& p : params) {
    auto [it, inserted] = moments_.try_emplace(p.key);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = Tensor<T>::zeros_like(*p.value);
      mo.v = Tensor<T>::zeros_like(*p.value);
    }
    ++mo.step;
    const T c1 = T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(mo.step)));
    const T c2 = T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(mo.step)));
    auto w = p.value->data();
    auto g = p.grad->data();
    auto m = mo.m.data();
    auto v = mo.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= decay * w[i];
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / c1;
      const T vhat = v[i] / c2;
      w[i] -= lr_t * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

template class AdamW<float>;
template class AdamW<double>;

namespace {

double cosine_factor(std::size_t t, std::size_t horizon, std::size_t warmup) {
  if (t < warmup) return static_cast<double>(t + 1) / static_cast<double>(warmup);
  const std::size_t span = horizon - warmup;
  if (span == 0) return 1.0;
  return 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t - warmup) / static_cast<double>(span)));
}

}  // namespace

double lr_at(const LrSchedule& s, std::size_t step) {
  if (step >= s.total_steps) {
    throw ContractError("lr_at: step " + std::to_string(step) + " >= total steps " + std::to_string(s.total_steps));
  }
  const double base = s.effective_base();
  switch (s.kind) {
    case LrKind::kFixed:
      return base;
    case LrKind::kCosine:
      return base * cosine_factor(step, s.total_steps, std::min(s.warmup_steps, s.total_steps));
    case LrKind::kCyclic: {
      std::size_t begin = 0;
      for (std::size_t len : s.stage_steps) {
        if (step < begin + len) return base * cosine_factor(step - begin, len, std::min(s.warmup_steps, len));
        begin += len;
      }
      throw ContractError("lr_at: cyclic stage steps do not cover step " + std::to_string(step));
    }
  }
  return base;
}

std::string to_string(LrKind kind) {
  switch (kind) {
    case LrKind::kFixed:
      return "fixed";
    case LrKind::kCosine:
      return "cosine";
    case LrKind::kCyclic:
      return "cyclic";
  }
  return "cosine";
}

LrKind lr_kind_from_string(const std::string& name) {
  if (name == "fixed") return LrKind::kFixed;
  if (name == "cosine") return LrKind::kCosine;
  if (name == "cyclic") return LrKind::kCyclic;
  throw ConfigError("unknown learning-rate schedule '" + name + "' (expected fixed, cosine or cyclic)");
}

}  // namespace lwfs
