#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lwfs/data.hpp"
#include "lwfs/model.hpp"
#include "lwfs/optim.hpp"
#include "lwfs/resource.hpp"
#include "lwfs/schedule.hpp"
#include "lwfs/ssl.hpp"

namespace lwfs {

/// Where server calibration sits within a round.
enum class CalibrationOrder {
  kBeforeDispatch,    // after the stage check, before clients train
  kAfterAggregation,  // after the round's aggregation
};

std::string to_string(CalibrationOrder o);
CalibrationOrder calibration_order_from_string(const std::string& name);

struct FedConfig {
  Strategy strategy = Strategy::kLwFedSsl;
  std::size_t num_clients = 4;
  std::size_t rounds = 15;
  Allocation allocation = Allocation::kUniform;
  bool weight_transfer = true;
  std::size_t calibration_epochs = 3;
  double client_fraction = 1.0;
  CalibrationOrder calibration_order = CalibrationOrder::kBeforeDispatch;

  void validate(const ModelSpec& spec) const;
};

/// Everything the round loop consumes besides data.
struct TrainingConfig {
  ModelSpec model;
  FedConfig fed;
  SslConfig ssl;
  AugmentPolicy augment;
  AdamWConfig adamw;
  LrKind lr_kind = LrKind::kCosine;
  double base_lr = 1.5e-4;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
  /// Alignment runs only for lw_fedssl with alpha > 0.
  bool alignment_active() const { return fed.strategy == Strategy::kLwFedSsl && ssl.align_weight > 0; }
  bool calibration_active() const { return fed.strategy == Strategy::kLwFedSsl && fed.calibration_epochs > 0; }
};

/// Learning-rate schedule over epochs (`epochs_per_round` per round).
LrSchedule make_lr_schedule(const TrainingConfig& cfg, const StageSchedule& schedule, std::size_t epochs_per_round);

/// Weighted average of identically shaped groups, accumulated in 64-bit in
/// the given order. Weights must sum to 1 within 1e-9.
template <typename T>
ParamGroup<T> aggregate(std::span<const ParamGroup<T>* const> groups, std::span<const double> weights);

struct StageChange {
  bool transferred = false;
  std::optional<std::string> warning;
};

/// Appends layer L_stage (fresh, seeded by (init_seed, stage)) and, when
/// requested and shapes allow, copies L_{stage-1} into it.
template <typename T>
StageChange advance_stage(ModelState<T>& global, std::size_t stage, bool weight_transfer);

/// Server state that persists across rounds.
template <typename T>
struct ServerState {
  AdamW<T> optimizer;
  std::optional<MomentumBranch<T>> target;
};

/// `epochs` epochs of the SSL objective (no alignment) over every layer of
/// `global` plus both heads. Unfreezes the model and leaves frozen_prefix
/// at 0; the caller re-freezes. `lrs[e]` is the rate of epoch e.
template <typename T>
EpochMetrics server_calibrate(ModelState<T>& global, ServerState<T>& server, const Dataset<T>& aux,
                              std::span<const double> lrs, const SslConfig& ssl, const AugmentPolicy& policy,
                              std::uint64_t seed);

/// One client's contribution to a round.
template <typename T>
struct ClientResult {
  std::size_t id = 0;
  std::vector<ParamGroup<T>> upload;  // encoder layers of the upload set, then proj, pred
  EpochMetrics metrics;
  std::optional<ModelState<T>> local;  // kept only on request
};

/// One client round: copy the broadcast model, reset target branch and
/// optimizer, run the local epochs, return the upload set.
template <typename T>
ClientResult<T> local_round(const ModelState<T>& global, const RoundPlan& plan, std::size_t client_id,
                            const Dataset<T>& data, const TrainingConfig& cfg, std::span<const double> lrs,
                            bool keep_local = false);

struct ClientRoundStats {
  std::size_t id = 0;
  std::size_t samples = 0;
  std::size_t batches = 0;
  double mean_loss = 0;
  std::optional<double> mean_align;
  std::size_t global_evaluations = 0;
};

struct RoundRecord {
  std::size_t round = 0;
  std::size_t stage = 0;
  std::size_t active_depth = 0;
  std::size_t frozen_prefix = 0;
  std::vector<std::size_t> participants;
  double mean_loss = 0;
  std::optional<double> calibration_loss;
  std::vector<ClientRoundStats> clients;
  std::vector<ResourceEntry> resources;
  std::vector<std::string> warnings;
  double wall_seconds = 0;

  /// One JSON object; wall-clock is included only when asked.
  std::string to_json(bool include_wall_clock = true) const;
};

template <typename T>
struct FederationData {
  std::vector<Dataset<T>> clients;
  std::optional<Dataset<T>> auxiliary;
};

/// Raised when a round fails numerically; names the round.
class RoundAborted : public NumericError {
 public:
  RoundAborted(std::size_t round, const std::string& what)
      : NumericError("round " + std::to_string(round) + ": " + what), round_(round) {}
  std::size_t round() const noexcept { return round_; }

 private:
  std::size_t round_;
};

template <typename T>
using RoundObserver = std::function<void(const RoundRecord&, const ModelState<T>&)>;

template <typename T>
struct FederationResult {
  ModelState<T> model;
  std::vector<RoundRecord> records;
};

/// Participants of a round: all clients, or a seeded subset when
/// client_fraction < 1. Sorted by id.
std::vector<std::size_t> sample_participants(const FedConfig& fed, std::uint64_t seed, std::size_t round);

/// The full round loop. The returned model and records are a pure function of the
/// config and data; worker count and scheduling do not affect them.
template <typename T>
FederationResult<T> run_federation(const TrainingConfig& cfg, const FederationData<T>& data,
                                   const RoundObserver<T>& observer = {});

}  // namespace lwfs
