#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lwfs/data.hpp"
#include "lwfs/graph.hpp"
#include "lwfs/model.hpp"
#include "lwfs/optim.hpp"

namespace lwfs {

struct SslConfig {
  double temperature = 0.2;
  double momentum = 0.99;
  double align_weight = 0.01;
  std::size_t local_epochs = 3;
  std::size_t batch_size = 32;
  /// L2-normalize encoder representations before the alignment loss.
  bool normalize_alignment = true;

  void validate() const;
};

/// Desk-scale view generator. Crop, flip and cutout need image geometry;
/// jitter applies to any feature vector.
struct AugmentPolicy {
  std::size_t crop_pad = 1;
  double flip_prob = 0.5;
  double jitter_sigma = 0.1;
  double cutout_frac = 0.0;

  bool needs_image() const { return crop_pad > 0 || flip_prob > 0 || cutout_frac > 0; }
  bool is_identity() const { return crop_pad == 0 && flip_prob == 0 && jitter_sigma == 0 && cutout_frac == 0; }
  void validate() const;
};

/// Two views of every row. View v of the row with id `sample_ids[i]` is a
/// pure function of (seed, sample id, v).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& x, std::span<const std::size_t> sample_ids,
                                        const std::optional<ImageShape>& image, const AugmentPolicy& policy,
                                        std::uint64_t seed);

/// Mean over rows i of -log(exp(q_i.k_i/tau) / sum_j exp(q_i.k_j/tau)).
/// Keys are in-batch (row i is the positive, the rest are negatives) and
/// receive no gradient.
template <typename T>
NodeId infonce(Graph<T>& g, NodeId q, NodeId k, T tau);

/// l(z1_local, z2_global) + l(z2_local, z1_global) in the InfoNCE form, with
/// global representations as constants.
template <typename T>
NodeId alignment_loss(Graph<T>& g, NodeId z1_local, NodeId z2_local, NodeId z1_global, NodeId z2_global, T tau);

/// Tape-free convenience wrappers.
template <typename T>
T infonce_value(const Tensor<T>& q, const Tensor<T>& k, T tau);
template <typename T>
T alignment_value(const Tensor<T>& z1_local, const Tensor<T>& z2_local, const Tensor<T>& z1_global,
                  const Tensor<T>& z2_global, T tau);

/// Target branch: momentum encoder F_k and momentum projection head H_k.
/// Stored as a model whose prediction head is empty.
template <typename T>
struct MomentumBranch {
  ModelState<T> branch;

  static MomentumBranch from(const ModelState<T>& online);
  /// Appends copies of online layers the branch does not have yet.
  void sync_depth(const ModelState<T>& online);
};

/// target <- mu * target + (1 - mu) * online over every parameter of F_k and
/// H_k. Running statistics are not parameters and are left alone.
template <typename T>
void momentum_update(const ModelState<T>& online, MomentumBranch<T>& target, double mu);

struct EpochMetrics {
  std::vector<double> batch_losses;
  std::vector<double> con_losses;
  std::vector<double> align_losses;
  std::size_t batches = 0;
  std::size_t samples = 0;
  std::size_t global_evaluations = 0;

  double mean_loss() const;
  void append(const EpochMetrics& other);
};

/// Scalars of one forward pass of the local objective.
struct SslLossNodes {
  NodeId total;
  NodeId contrastive;
  std::optional<NodeId> alignment;
};

/// Builds l_con + alpha * l_align for one pair of views. `global` may be
/// null, in which case (or when alpha == 0) the alignment term is skipped
/// and the global encoder is never evaluated.
template <typename T>
SslLossNodes build_ssl_loss(ParamBinder<T>& online, ModelState<T>& model, MomentumBranch<T>& target,
                            ModelState<T>* global, const Tensor<T>& x1, const Tensor<T>& x2, const SslConfig& cfg);

/// One local epoch: shuffled batches (short tail dropped), two views, the
/// loss above, one AdamW step on the trainable set, then the momentum
/// update. Throws NumericError naming `actor` and the batch on a
/// non-finite loss.
template <typename T>
EpochMetrics local_ssl_epoch(ModelState<T>& model, MomentumBranch<T>& target, AdamW<T>& optimizer,
                             ModelState<T>* global, const Dataset<T>& data, const SslConfig& cfg,
                             const AugmentPolicy& policy, double lr, std::uint64_t seed, const std::string& actor);

/// Batch size actually used for a dataset of `n` rows: B, or n when n < B.
std::size_t effective_batch(std::size_t n, std::size_t batch_size);

}  // namespace lwfs
