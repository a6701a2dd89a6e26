#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "lwfs/config.hpp"
#include "lwfs/data.hpp"
#include "lwfs/eval.hpp"
#include "lwfs/fed.hpp"

namespace lwfs {

template <typename T>
struct PreparedData {
  Dataset<T> train;  // parent of the client partition
  Partition partition;
  FederationData<T> fed;
  Dataset<T> eval;  // labeled probe set
};

/// Builds every dataset the run needs from the config and its seed.
template <typename T>
PreparedData<T> prepare_data(const RunConfig& cfg);

/// Per-client communication over the whole schedule, assuming the client
/// participates in every round.
struct CommTotals {
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t encoder_down = 0;
  std::uint64_t encoder_up = 0;
};
CommTotals comm_totals(const ModelSpec& spec, const StageSchedule& schedule);

struct ExperimentOutcome {
  int exit_code = 0;
  std::string summary_json;
  std::optional<std::size_t> failed_round;
  std::optional<EvalReport> probe;
  std::optional<EvalReport> baseline;
};

struct ExperimentOptions {
  /// Write a checkpoint at the end of every stage (the final model is
  /// always written).
  bool stage_checkpoints = true;
  /// Probe an untrained encoder of the same depth as a baseline.
  bool probe_baseline = true;
};

/// Runs federation, probes the final encoder and writes run.jsonl,
/// ledger.csv, checkpoints/, eval.json and summary.json into `out_dir`.
/// Numeric failure yields exit code 10 with the failing round in the
/// summary.
ExperimentOutcome run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                 const ExperimentOptions& options = {});

}  // namespace lwfs
