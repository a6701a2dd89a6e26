#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lwfs/errors.hpp"
#include "lwfs/resource.hpp"

namespace lwfs {

class ReportError : public Error {
 public:
  using Error::Error;
};

/// What the report needs from one completed run directory.
struct RunDigest {
  std::string dir;
  std::string strategy;
  std::string status;
  std::optional<double> probe_accuracy;
  std::uint64_t peak_mem_model = 0;  // client 0
  std::uint64_t flops_total = 0;     // client 0, forward + backward
  std::uint64_t bytes_down = 0;      // client 0
  std::uint64_t bytes_up = 0;
  std::uint64_t encoder_down = 0;  // per client over the schedule
  std::uint64_t encoder_up = 0;
  std::vector<ResourceEntry> ledger;
};

/// Throws ReportError naming every missing file.
RunDigest load_run(const std::filesystem::path& dir);

struct ComparisonReport {
  std::string text;        // aligned table plus ratios against the first run
  std::string table_csv;   // one row per run
  std::string curves_csv;  // per-round costs of client 0, one row per (run, round)
};

/// Ratios are first-run / this-run, so "12.00" under encoder upload means
/// the first run uploads twelve times as much.
ComparisonReport compare_runs(const std::vector<RunDigest>& runs);

}  // namespace lwfs
