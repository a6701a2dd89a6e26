#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "lwfs/tensor.hpp"

namespace lwfs {

/// Channel-major image geometry of a flattened feature row.
struct ImageShape {
  std::size_t channels = 1;
  std::size_t height = 1;
  std::size_t width = 1;

  std::size_t numel() const { return channels * height * width; }
  bool operator==(const ImageShape&) const = default;
};

template <typename T>
struct Dataset {
  Tensor<T> features;           // [n, D]
  std::vector<int> labels;      // empty when unlabeled
  std::optional<ImageShape> image;
  std::string provenance;

  std::size_t size() const { return features.rows(); }
  std::size_t dim() const { return features.cols(); }
  bool labeled() const { return !labels.empty(); }
  std::size_t num_classes() const;

  Dataset subset(std::span<const std::size_t> index) const;
};

struct SyntheticSpec {
  std::size_t n = 512;
  std::size_t classes = 2;
  std::size_t dim = 256;
  double cluster_sep = 6.0;
  std::uint64_t seed = 0;
  /// Seed for the class centers; defaults to `seed`. Sharing a center seed
  /// between datasets puts them in the same domain.
  std::optional<std::uint64_t> center_seed;
  /// Std-dev of a per-center Gaussian displacement; > 0 shifts the domain.
  double center_shift = 0.0;
};

/// Gaussian blobs: one center per class at radius cluster_sep, unit noise.
/// Rows are laid out as a 1 x s x s image when dim is a perfect square.
template <typename T>
Dataset<T> gen_synthetic(const SyntheticSpec& spec);

/// Standard CIFAR-10 binary layout: records of 1 label byte followed by
/// 3072 bytes (R, G, B planes of 32x32). Features are scaled to [0, 1].
template <typename T>
Dataset<T> load_cifar10_bin(const std::filesystem::path& path);

template <typename T>
Dataset<T> parse_cifar10_bin(std::span<const std::uint8_t> bytes, const std::string& provenance = "cifar10");

/// Client index lists over a parent dataset.
struct Partition {
  std::vector<std::vector<std::size_t>> clients;
  std::optional<double> beta;
  std::uint64_t seed = 0;

  std::size_t num_clients() const { return clients.size(); }
  std::size_t total() const;
  /// Disjoint, nonempty, all indices < parent_size.
  void validate(std::size_t parent_size) const;

  std::string to_json() const;
  static Partition from_json(const std::string& text);
};

/// Seeded shuffle, then contiguous split; sizes differ by at most one.
Partition partition_uniform(std::size_t n, std::size_t num_clients, std::uint64_t seed);

/// Label skew: for every class draw p ~ Dirichlet(beta * 1_N) and hand the
/// class's shuffled indices to clients by largest-remainder rounding of p.
/// The whole partition is redrawn (up to `max_retries` times) until every
/// client holds at least `min_per_client` samples.
Partition partition_dirichlet(std::span<const int> labels, std::size_t num_clients, double beta, std::uint64_t seed,
                              std::size_t min_per_client = 2, std::size_t max_retries = 100);

/// Class-stratified sample of ceil(ratio * n) rows with labels removed.
template <typename T>
Dataset<T> sample_auxiliary(const Dataset<T>& ds, double ratio, std::uint64_t seed);

/// Splits `total` into integer counts proportional to `weights` with the
/// largest-remainder method; ties go to the lowest index.
std::vector<std::size_t> largest_remainder(std::span<const double> weights, std::size_t total);

}  // namespace lwfs
