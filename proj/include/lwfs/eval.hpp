#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lwfs/data.hpp"
#include "lwfs/model.hpp"

namespace lwfs {

struct ProbeConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 256;
  double base_lr = 3e-2;  // scaled by batch_size / 256
  double weight_decay = 1e-5;
  std::size_t warmup_epochs = 0;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Fine-tuning defaults: 40 epochs, 10 of them warmup, base rate 1e-3.
ProbeConfig default_fine_tune_config();

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Per-class seeded shuffle; round(test_fraction * class count) rows of each
/// class go to the test side. Both sides sorted.
Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed);

struct EvalReport {
  std::string mode;  // "linear_probe" or "fine_tune"
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<std::size_t> class_correct;
  std::vector<std::size_t> class_total;
  std::vector<int> predictions;  // test rows, in split order
  std::vector<int> truth;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  std::string encoder_id;
  std::string note = "features probed without augmentation";

  std::vector<double> per_class_accuracy() const;
  std::string to_json() const;
};

/// Encoder output at full active depth, running statistics, no graph.
template <typename T>
Tensor<T> extract_features(const ModelState<T>& encoder, const Dataset<T>& ds);

/// Linear classifier on standardized frozen features (statistics from the
/// train split), AdamW with cosine decay. Argmax ties go to the lowest class.
template <typename T>
EvalReport linear_probe(const Tensor<T>& features, std::span<const int> labels, const ProbeConfig& cfg,
                        const Split& split);

/// Convenience: stratified split from cfg, then linear_probe.
template <typename T>
EvalReport linear_probe(const Tensor<T>& features, std::span<const int> labels, const ProbeConfig& cfg);

/// Classifier head on a copy of the encoder with every layer trainable.
template <typename T>
EvalReport fine_tune(const ModelState<T>& encoder, const Dataset<T>& ds, const ProbeConfig& cfg, const Split& split);

}  // namespace lwfs
