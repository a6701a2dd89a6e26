#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "lwfs/errors.hpp"
#include "lwfs/eval.hpp"
#include "lwfs/fed.hpp"

namespace lwfs {

/// Process exit codes of the command-line tool.
namespace exit_code {
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kMissingFile = 2;
inline constexpr int kSyntax = 3;
inline constexpr int kUnknownKey = 4;
inline constexpr int kInvalid = 5;
inline constexpr int kReport = 6;
inline constexpr int kNumeric = 10;
inline constexpr int kGradcheck = 11;
}  // namespace exit_code

/// Configuration failure carrying the exit code it maps to.
class ConfigFileError : public ConfigError {
 public:
  ConfigFileError(int code, const std::string& what) : ConfigError(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

enum class Precision { kF32, kF64 };
std::string to_string(Precision p);
Precision precision_from_string(const std::string& name);

enum class DataSource { kSynthetic, kCifar10 };
enum class PartitionKind { kUniform, kDirichlet };
enum class AuxSource { kNone, kSynthetic, kSample };

struct DataConfig {
  DataSource source = DataSource::kSynthetic;
  std::string path;  // CIFAR-10 binary batch
  std::size_t samples = 512;
  std::size_t classes = 2;
  double cluster_sep = 6.0;
  std::size_t eval_samples = 1000;  // labeled probe set
  std::string eval_path;            // CIFAR-10 probe batch; defaults to `path`

  PartitionKind partition = PartitionKind::kUniform;
  double beta = 0.5;
  std::size_t min_per_client = 2;

  AuxSource aux_source = AuxSource::kSynthetic;
  std::size_t aux_samples = 128;
  double aux_ratio = 0.1;
  double aux_center_shift = 0.5;
};

struct RunConfig {
  TrainingConfig train;
  DataConfig data;
  ProbeConfig probe;
  bool fine_tune = false;
  ProbeConfig fine_tune_cfg = default_fine_tune_config();
  Precision precision = Precision::kF32;
  std::optional<std::string> out_dir;

  /// Cross-field checks; throws ConfigFileError with kInvalid.
  void validate() const;
  /// Resolved configuration as TOML (round-trips through parse_config_text).
  std::string to_toml() const;
};

/// Parses and validates. Throws ConfigFileError with the matching exit code.
RunConfig parse_config(const std::filesystem::path& path);
RunConfig parse_config_text(const std::string& text, const std::string& source = "<string>");

}  // namespace lwfs
