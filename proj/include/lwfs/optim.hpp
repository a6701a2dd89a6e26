#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "lwfs/tensor.hpp"

namespace lwfs {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-5;
};

/// A parameter to update together with its gradient.
template <typename T>
struct ParamUpdate {
  std::string key;
  Tensor<T>* value;
  const Tensor<T>* grad;
};

/// AdamW with decoupled weight decay. Moments are created on first use and
/// keyed by parameter name, so only parameters that were ever trained hold
/// optimizer state. Each parameter keeps its own step count so layers added
/// later get their own bias correction.
template <typename T>
class AdamW {
 public:
  struct Moments {
    Tensor<T> m;
    Tensor<T> v;
    std::uint64_t step = 0;
  };

  explicit AdamW(AdamWConfig config = {}) : config_(config) {}

  /// Throws NumericError when any gradient is non-finite; nothing is
  /// updated in that case.
  void step(std::span<const ParamUpdate<T>> params, double lr);

  const AdamWConfig& config() const noexcept { return config_; }
  const std::map<std::string, Moments>& moments() const noexcept { return moments_; }

 private:
  AdamWConfig config_;
  std::map<std::string, Moments> moments_;
};

enum class LrKind { kFixed, kCosine, kCyclic };

/// Learning-rate schedule over local epochs. The effective base rate is
/// base_lr * batch_size / 256.
struct LrSchedule {
  LrKind kind = LrKind::kCosine;
  double base_lr = 1.5e-4;
  std::size_t batch_size = 256;
  std::size_t total_steps = 1;
  std::vector<std::size_t> stage_steps;  // cyclic only; sums to total_steps
  std::size_t warmup_steps = 0;

  double effective_base() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
};

double lr_at(const LrSchedule& schedule, std::size_t step);

std::string to_string(LrKind kind);
LrKind lr_kind_from_string(const std::string& name);

}  // namespace lwfs
