#include "lwfs/ssl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lwfs/rng.hpp"

namespace lwfs {

void SslConfig::validate() const {
  if (!(temperature > 0)) throw ConfigError("ssl: temperature must be > 0");
  if (momentum < 0 || momentum > 1) throw ConfigError("ssl: momentum must be in [0, 1]");
  if (align_weight < 0) throw ConfigError("ssl: align_weight must be >= 0");
  if (local_epochs < 1) throw ConfigError("ssl: local_epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("ssl: batch_size must be >= 2");
}

void AugmentPolicy::validate() const {
  if (flip_prob < 0 || flip_prob > 1) throw ConfigError("augment: flip_prob must be in [0, 1]");
  if (jitter_sigma < 0) throw ConfigError("augment: jitter_sigma must be >= 0");
  if (cutout_frac < 0 || cutout_frac >= 1) throw ConfigError("augment: cutout_frac must be in [0, 1)");
}

namespace {

template <typename T>
void augment_row(std::span<const T> src, std::span<T> dst, const std::optional<ImageShape>& image,
                 const AugmentPolicy& policy, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::copy(src.begin(), src.end(), dst.begin());
  if (image) {
    const std::size_t c = image->channels, h = image->height, w = image->width;
    if (policy.crop_pad > 0) {
      const auto pad = static_cast<std::ptrdiff_t>(policy.crop_pad);
      std::uniform_int_distribution<std::ptrdiff_t> shift(-pad, pad);
      const std::ptrdiff_t dy = shift(rng), dx = shift(rng);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + dy, sx = static_cast<std::ptrdiff_t>(x) + dx;
            const bool inside = sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(h) &&
                                sx < static_cast<std::ptrdiff_t>(w);
            dst[(ch * h + y) * w + x] =
                inside ? src[(ch * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)] : T(0);
          }
        }
      }
    }
    if (policy.flip_prob > 0 && unit(rng) < policy.flip_prob) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = 0; y < h; ++y) {
          auto row = dst.subspan((ch * h + y) * w, w);
          std::reverse(row.begin(), row.end());
        }
      }
    }
    if (policy.cutout_frac > 0) {
      const auto side = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::lround(std::sqrt(policy.cutout_frac) * static_cast<double>(std::min(h, w)))));
      std::uniform_int_distribution<std::size_t> oy(0, h - side), ox(0, w - side);
      const std::size_t y0 = oy(rng), x0 = ox(rng);
      for (std::size_t ch = 0; ch < c; ++ch) {
        for (std::size_t y = y0; y < y0 + side; ++y) {
          for (std::size_t x = x0; x < x0 + side; ++x) dst[(ch * h + y) * w + x] = T(0);
        }
      }
    }
  }
  if (policy.jitter_sigma > 0) {
    for (auto& v : dst) v += static_cast<T>(policy.jitter_sigma * normal(rng));
  }
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>& x, std::span<const std::size_t> sample_ids,
                                        const std::optional<ImageShape>& image, const AugmentPolicy& policy,
                                        std::uint64_t seed) {
  if (x.rank() != 2 || x.rows() < 1) throw ContractError("augment: expected a non-empty batch");
  if (sample_ids.size() != x.rows()) throw ContractError("augment: one sample id per row required");
  const bool geometric = policy.crop_pad > 0 || policy.flip_prob > 0 || policy.cutout_frac > 0;
  if (geometric && (!image || image->numel() != x.cols())) {
    throw ConfigError("augment: crop/flip/cutout need image-shaped rows (feature dim " + std::to_string(x.cols()) + ")");
  }
  Tensor<T> v1 = x, v2 = x;
  if (policy.is_identity()) return {std::move(v1), std::move(v2)};
  const std::size_t d = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto src = x.data().subspan(r * d, d);
    Rng rng1(mix_seed(seed, {seed_tag::kAugment, sample_ids[r], 0}));
    augment_row(src, v1.data().subspan(r * d, d), image, policy, rng1);
    Rng rng2(mix_seed(seed, {seed_tag::kAugment, sample_ids[r], 1}));
    augment_row(src, v2.data().subspan(r * d, d), image, policy, rng2);
  }
  return {std::move(v1), std::move(v2)};
}

template <typename T>
NodeId infonce(Graph<T>& g, NodeId q, NodeId k, T tau) {
  const auto& qv = g.value(q);
  const auto& kv = g.value(k);
  if (qv.rank() != 2 || qv.rows() == 0) throw ContractError("infonce: empty batch");
  if (qv.shape() != kv.shape()) {
    throw DimensionError("infonce: q " + shape_str(qv.shape()) + " vs k " + shape_str(kv.shape()));
  }
  if (!(tau > 0)) throw ContractError("infonce: temperature must be > 0");
  std::vector<std::size_t> targets(qv.rows());
  std::iota(targets.begin(), targets.end(), 0);
  const NodeId logits = g.scale(g.matmul(q, g.transpose(g.stop_gradient(k))), T(1) / tau);
  return g.cross_entropy(logits, std::move(targets));
}

template <typename T>
NodeId alignment_loss(Graph<T>& g, NodeId z1_local, NodeId z2_local, NodeId z1_global, NodeId z2_global, T tau) {
  return g.add(infonce(g, z1_local, g.stop_gradient(z2_global), tau),
               infonce(g, z2_local, g.stop_gradient(z1_global), tau));
}

template <typename T>
T infonce_value(const Tensor<T>& q, const Tensor<T>& k, T tau) {
  Graph<T> g;
  return g.value(infonce(g, g.constant(q), g.constant(k), tau)).item();
}

template <typename T>
T alignment_value(const Tensor<T>& z1_local, const Tensor<T>& z2_local, const Tensor<T>& z1_global,
                  const Tensor<T>& z2_global, T tau) {
  Graph<T> g;
  return g.value(alignment_loss(g, g.constant(z1_local), g.constant(z2_local), g.constant(z1_global),
                                g.constant(z2_global), tau))
      .item();
}

template <typename T>
MomentumBranch<T> MomentumBranch<T>::from(const ModelState<T>& online) {
  MomentumBranch b{online};
  b.branch.pred = ParamGroup<T>{"pred", {}};
  return b;
}

template <typename T>
void MomentumBranch<T>::sync_depth(const ModelState<T>& online) {
  for (std::size_t l = branch.encoder.size(); l < online.encoder.size(); ++l) branch.encoder.push_back(online.encoder[l]);
  branch.frozen_prefix = online.frozen_prefix;
}

namespace {

template <typename T>
void ema_group(const ParamGroup<T>& online, ParamGroup<T>& target, T mu) {
  if (online.tensors.size() != target.tensors.size()) {
    throw ContractError("momentum_update: group " + target.name + " layout differs from online branch");
  }
  for (std::size_t i = 0; i < online.tensors.size(); ++i) {
    const auto& o = online.tensors[i];
    auto& t = target.tensors[i];
    if (o.value.shape() != t.value.shape() || o.name != t.name) {
      throw ContractError("momentum_update: shape mismatch at " + target.name + "/" + t.name);
    }
    if (!t.trainable) continue;
    auto tv = t.value.data();
    auto ov = o.value.data();
    for (std::size_t j = 0; j < tv.size(); ++j) tv[j] = mu * tv[j] + (T(1) - mu) * ov[j];
  }
}

}  // namespace

template <typename T>
void momentum_update(const ModelState<T>& online, MomentumBranch<T>& target, double mu) {
  if (online.encoder.size() != target.branch.encoder.size()) {
    throw ContractError("momentum_update: branch depth " + std::to_string(target.branch.encoder.size()) +
                        " vs online depth " + std::to_string(online.encoder.size()));
  }
  if (mu == 1.0) return;
  const T m = static_cast<T>(mu);
  for (std::size_t l = 0; l < online.encoder.size(); ++l) ema_group(online.encoder[l], target.branch.encoder[l], m);
  ema_group(online.proj, target.branch.proj, m);
}

double EpochMetrics::mean_loss() const {
  if (batch_losses.empty()) return 0.0;
  return std::accumulate(batch_losses.begin(), batch_losses.end(), 0.0) / static_cast<double>(batch_losses.size());
}

void EpochMetrics::append(const EpochMetrics& other) {
  batch_losses.insert(batch_losses.end(), other.batch_losses.begin(), other.batch_losses.end());
  con_losses.insert(con_losses.end(), other.con_losses.begin(), other.con_losses.end());
  align_losses.insert(align_losses.end(), other.align_losses.begin(), other.align_losses.end());
  batches += other.batches;
  samples += other.samples;
  global_evaluations += other.global_evaluations;
}

template <typename T>
SslLossNodes build_ssl_loss(ParamBinder<T>& online, ModelState<T>& model, MomentumBranch<T>& target,
                            ModelState<T>* global, const Tensor<T>& x1, const Tensor<T>& x2, const SslConfig& cfg) {
  Graph<T>& g = online.graph();
  const std::size_t depth = model.active_depth();
  const T tau = static_cast<T>(cfg.temperature);
  const T eps = static_cast<T>(1e-12);
  const NodeId in1 = g.constant(x1);
  const NodeId in2 = g.constant(x2);

  const NodeId z1 = forward_encoder(online, model, in1, depth, PassMode::online());
  const NodeId z2 = forward_encoder(online, model, in2, depth, PassMode::online());
  auto query = [&](NodeId z) {
    const NodeId h = forward_proj(online, model.proj, z, true, NormMode::kTrain);
    return g.l2_normalize(forward_pred(online, model.pred, h, true, NormMode::kTrain), eps);
  };
  const NodeId q1 = query(z1);
  const NodeId q2 = query(z2);

  // The target branch is bound through its own binder: constants only.
  ParamBinder<T> frozen(g);
  auto key = [&](NodeId in) {
    const NodeId zk = forward_encoder(frozen, target.branch, in, depth, PassMode::target());
    return g.l2_normalize(forward_proj(frozen, target.branch.proj, zk, false, NormMode::kBatchStats), eps);
  };
  const NodeId k1 = key(in1);
  const NodeId k2 = key(in2);

  SslLossNodes out;
  out.contrastive = g.add(infonce(g, q1, k2, tau), infonce(g, q2, k1, tau));
  out.total = out.contrastive;
  if (global != nullptr && cfg.align_weight > 0) {
    if (global->active_depth() != depth) {
      throw ContractError("local ssl: global snapshot depth " + std::to_string(global->active_depth()) +
                          " differs from local depth " + std::to_string(depth));
    }
    ParamBinder<T> snapshot(g);
    NodeId g1 = forward_encoder(snapshot, *global, in1, depth, PassMode::target());
    NodeId g2 = forward_encoder(snapshot, *global, in2, depth, PassMode::target());
    NodeId l1 = z1, l2 = z2;
    if (cfg.normalize_alignment) {
      l1 = g.l2_normalize(l1, eps);
      l2 = g.l2_normalize(l2, eps);
      g1 = g.l2_normalize(g1, eps);
      g2 = g.l2_normalize(g2, eps);
    }
    out.alignment = alignment_loss(g, l1, l2, g1, g2, tau);
    out.total = g.add(out.contrastive, g.scale(*out.alignment, static_cast<T>(cfg.align_weight)));
  }
  return out;
}

std::size_t effective_batch(std::size_t n, std::size_t batch_size) { return std::min(n, batch_size); }

template <typename T>
EpochMetrics local_ssl_epoch(ModelState<T>& model, MomentumBranch<T>& target, AdamW<T>& optimizer,
                             ModelState<T>* global, const Dataset<T>& data, const SslConfig& cfg,
                             const AugmentPolicy& policy, double lr, std::uint64_t seed, const std::string& actor) {
  EpochMetrics metrics;
  const std::size_t n = data.size();
  const std::size_t b = effective_batch(n, cfg.batch_size);
  if (b < 2) return metrics;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, {seed_tag::kShuffle}));
  std::shuffle(order.begin(), order.end(), rng);

  for (std::size_t batch = 0; (batch + 1) * b <= n; ++batch) {
    std::span<const std::size_t> ids(order.data() + batch * b, b);
    const Tensor<T> x = gather_rows(data.features, ids);
    auto [x1, x2] = augment(x, ids, data.image, policy, mix_seed(seed, {seed_tag::kAugment, batch}));

    Graph<T> g;
    ParamBinder<T> binder(g);
    const SslLossNodes loss = build_ssl_loss(binder, model, target, global, x1, x2, cfg);
    const T total = g.value(loss.total).item();
    if (!std::isfinite(total)) {
      throw NumericError(actor + ": non-finite loss at batch " + std::to_string(batch));
    }
    const auto grads = g.backward(loss.total);
    std::vector<ParamUpdate<T>> updates;
    updates.reserve(binder.trainable().size());
    for (const auto& bnd : binder.trainable()) updates.push_back({bnd.key, &bnd.tensor->value, &grads.at(bnd.node)});
    try {
      optimizer.step(updates, lr);
    } catch (const NumericError& e) {
      throw NumericError(actor + ": batch " + std::to_string(batch) + ": " + e.what());
    }
    momentum_update(model, target, cfg.momentum);

    metrics.batch_losses.push_back(static_cast<double>(total));
    metrics.con_losses.push_back(static_cast<double>(g.value(loss.contrastive).item()));
    if (loss.alignment) {
      metrics.align_losses.push_back(static_cast<double>(g.value(*loss.alignment).item()));
      ++metrics.global_evaluations;
    }
    ++metrics.batches;
    metrics.samples += b;
  }
  return metrics;
}

#define LWFS_INSTANTIATE(T)                                                                                         \
  template std::pair<Tensor<T>, Tensor<T>> augment(const Tensor<T>&, std::span<const std::size_t>,                  \
                                                   const std::optional<ImageShape>&, const AugmentPolicy&,          \
                                                   std::uint64_t);                                                  \
  template NodeId infonce(Graph<T>&, NodeId, NodeId, T);                                                            \
  template NodeId alignment_loss(Graph<T>&, NodeId, NodeId, NodeId, NodeId, T);                                     \
  template T infonce_value(const Tensor<T>&, const Tensor<T>&, T);                                                  \
  template T alignment_value(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);            \
  template struct MomentumBranch<T>;                                                                                \
  template void momentum_update(const ModelState<T>&, MomentumBranch<T>&, double);                                  \
  template SslLossNodes build_ssl_loss(ParamBinder<T>&, ModelState<T>&, MomentumBranch<T>&, ModelState<T>*,         \
                                       const Tensor<T>&, const Tensor<T>&, const SslConfig&);                       \
  template EpochMetrics local_ssl_epoch(ModelState<T>&, MomentumBranch<T>&, AdamW<T>&, ModelState<T>*,              \
                                        const Dataset<T>&, const SslConfig&, const AugmentPolicy&, double,          \
                                        std::uint64_t, const std::string&);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
