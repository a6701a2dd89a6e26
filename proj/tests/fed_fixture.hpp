#pragma once

#include <vector>

#include "lwfs/checkpoint.hpp"
#include "lwfs/data.hpp"
#include "lwfs/fed.hpp"
#include "test_util.hpp"

namespace lwfs::test {

/// A federation small enough to run many times per test: two-block tiny
/// model, three clients of 16 samples each, jitter-only views.
inline TrainingConfig small_federation(Strategy strategy, std::size_t layers = 2, std::size_t rounds = 4) {
  TrainingConfig cfg;
  cfg.model = tiny_spec(layers);
  cfg.fed.strategy = strategy;
  cfg.fed.num_clients = 3;
  cfg.fed.rounds = rounds;
  cfg.fed.calibration_epochs = 1;
  cfg.ssl.batch_size = 8;
  cfg.ssl.local_epochs = 2;
  cfg.ssl.align_weight = 0.1;
  cfg.augment = AugmentPolicy{0, 0.0, 0.3, 0.0};
  cfg.base_lr = 0.3;
  cfg.seed = 3;
  return cfg;
}

template <typename T>
FederationData<T> small_federation_data(const TrainingConfig& cfg, std::uint64_t seed = 5) {
  SyntheticSpec s;
  s.n = 16 * cfg.fed.num_clients;
  s.classes = 2;
  s.dim = cfg.model.input_dim;
  s.cluster_sep = 3.0;
  s.seed = seed;
  const Dataset<T> all = gen_synthetic<T>(s);
  const Partition p = partition_uniform(all.size(), cfg.fed.num_clients, seed);
  FederationData<T> out;
  for (const auto& idx : p.clients) out.clients.push_back(all.subset(idx));
  s.n = 16;
  s.seed = seed + 1;
  s.center_seed = seed;
  out.auxiliary = gen_synthetic<T>(s);
  return out;
}

/// Serialized global model after every round, plus the final one.
template <typename T>
struct Trajectory {
  std::vector<std::vector<std::uint8_t>> models;
  std::vector<RoundRecord> records;
};

template <typename T>
Trajectory<T> run_trajectory(const TrainingConfig& cfg, const FederationData<T>& data) {
  Trajectory<T> t;
  auto result = run_federation<T>(cfg, data, [&](const RoundRecord&, const ModelState<T>& m) {
    t.models.push_back(serialize_model(m));
  });
  t.records = std::move(result.records);
  return t;
}

}  // namespace lwfs::test
