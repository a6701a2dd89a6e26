#pragma once

// Scripted reimplementation of one client epoch of the local objective.
// It shares only the primitive graph ops (checked separately against finite
// differences) with the library: the network composition, running-statistic
// bookkeeping, loss assembly, optimizer and momentum update are rewritten
// here from the algorithm description.

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "lwfs/graph.hpp"
#include "lwfs/model.hpp"
#include "lwfs/rng.hpp"
#include "lwfs/ssl.hpp"

namespace lwfs::test {

struct OracleAdam {
  struct M {
    Tensor<double> m, v;
    int t = 0;
  };
  std::map<std::string, M> state;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0;

  void update(const std::string& key, Tensor<double>& w, const Tensor<double>& g, double lr) {
    M& s = state[key];
    if (s.t == 0) {
      s.m = Tensor<double>::zeros_like(w);
      s.v = Tensor<double>::zeros_like(w);
    }
    ++s.t;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1 - lr * wd;
      s.m[i] = b1 * s.m[i] + (1 - b1) * g[i];
      s.v[i] = b2 * s.v[i] + (1 - b2) * g[i] * g[i];
      const double mh = s.m[i] / (1 - std::pow(b1, s.t));
      const double vh = s.v[i] / (1 - std::pow(b2, s.t));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

enum class OracleNorm { kUpdateRunning, kBatchOnly, kRunning };

class OracleNet {
 public:
  explicit OracleNet(Graph<double>& g) : g_(g) {}

  // Parameter nodes are created once per tensor and shared across views.
  NodeId leaf(const std::string& key, NamedTensor<double>& t, bool trainable) {
    if (!trainable || !t.trainable) return g_.constant(t.value);
    auto it = params_.find(key);
    if (it != params_.end()) return it->second.first;
    const NodeId id = g_.parameter(t.value);
    params_.emplace(key, std::pair{id, &t});
    return id;
  }

  NodeId norm(const std::string& group, ParamGroup<double>& pg, const std::string& p, NodeId x, bool trainable,
              OracleNorm mode) {
    const NodeId gamma = leaf(group + "/" + p + ".gamma", pg.get(p + ".gamma"), trainable);
    const NodeId beta = leaf(group + "/" + p + ".beta", pg.get(p + ".beta"), trainable);
    auto& rm = pg.get(p + ".running_mean").value;
    auto& rv = pg.get(p + ".running_var").value;
    if (mode == OracleNorm::kRunning) return g_.batch_norm_eval(x, gamma, beta, rm, rv, 1e-5);
    const NodeId y = g_.batch_norm_train(x, gamma, beta, 1e-5);
    if (mode == OracleNorm::kUpdateRunning) {
      const Tensor<double>& xv = g_.value(x);
      const std::size_t b = xv.rows();
      for (std::size_t j = 0; j < xv.cols(); ++j) {
        double mean = 0, var = 0;
        for (std::size_t r = 0; r < b; ++r) mean += xv.at(r, j);
        mean /= static_cast<double>(b);
        for (std::size_t r = 0; r < b; ++r) var += (xv.at(r, j) - mean) * (xv.at(r, j) - mean);
        var /= static_cast<double>(b);
        rm[j] = 0.9 * rm[j] + 0.1 * mean;
        rv[j] = 0.9 * rv[j] + 0.1 * var;
      }
    }
    return y;
  }

  NodeId encoder(ModelState<double>& m, NodeId x, bool online, OracleNorm active) {
    NodeId h = x;
    for (std::size_t l = 0; l < m.encoder.size(); ++l) {
      ParamGroup<double>& pg = m.encoder[l];
      const bool frozen = l < m.frozen_prefix;
      const bool train = online && !frozen;
      const OracleNorm mode = frozen ? OracleNorm::kRunning : active;
      const std::string name = pg.name;
      NodeId u = norm(name, pg, "norm", h, train, mode);
      u = g_.add_row(g_.matmul(u, leaf(name + "/fc1.weight", pg.get("fc1.weight"), train)),
                     leaf(name + "/fc1.bias", pg.get("fc1.bias"), train));
      u = g_.gelu(u);
      u = g_.add_row(g_.matmul(u, leaf(name + "/fc2.weight", pg.get("fc2.weight"), train)),
                     leaf(name + "/fc2.bias", pg.get("fc2.bias"), train));
      if (g_.value(u).shape() == g_.value(h).shape()) u = g_.add(h, u);
      h = u;
    }
    return h;
  }

  NodeId head(ParamGroup<double>& pg, NodeId x, std::size_t layers, bool train, OracleNorm mode) {
    NodeId h = x;
    for (std::size_t i = 1; i <= layers; ++i) {
      const std::string p = "l" + std::to_string(i);
      h = g_.matmul(h, leaf(pg.name + "/" + p + ".weight", pg.get(p + ".weight"), train));
      h = norm(pg.name, pg, p + ".norm", h, train, mode);
      if (i < layers) h = g_.relu(h);
    }
    return h;
  }

  NodeId nce(NodeId q, NodeId k, double tau) {
    const std::size_t b = g_.value(q).rows();
    std::vector<std::size_t> idx(b);
    std::iota(idx.begin(), idx.end(), 0);
    return g_.cross_entropy(g_.scale(g_.matmul(q, g_.transpose(g_.constant(g_.value(k)))), 1 / tau), idx);
  }

  const std::map<std::string, std::pair<NodeId, NamedTensor<double>*>>& params() const { return params_; }

 private:
  Graph<double>& g_;
  std::map<std::string, std::pair<NodeId, NamedTensor<double>*>> params_;
};

/// One epoch over `data` (short tail dropped), mirroring the documented seed
/// derivation: shuffle from (seed, shuffle tag), views from (seed, augment
/// tag, batch index).
inline void oracle_epoch(ModelState<double>& model, ModelState<double>& target, OracleAdam& opt,
                         const ModelState<double>* global, const Dataset<double>& data, const SslConfig& cfg,
                         const AugmentPolicy& policy, double lr, std::uint64_t seed) {
  const std::size_t n = data.size();
  const std::size_t b = std::min(n, cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(mix_seed(seed, {seed_tag::kShuffle}));
  std::shuffle(order.begin(), order.end(), rng);
  const double tau = cfg.temperature;
  for (std::size_t batch = 0; (batch + 1) * b <= n; ++batch) {
    std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(batch * b),
                                 order.begin() + static_cast<std::ptrdiff_t>((batch + 1) * b));
    Tensor<double> x({b, data.dim()});
    for (std::size_t r = 0; r < b; ++r) {
      for (std::size_t c = 0; c < data.dim(); ++c) x.at(r, c) = data.features.at(ids[r], c);
    }
    auto [x1, x2] = augment(x, ids, data.image, policy, mix_seed(seed, {seed_tag::kAugment, batch}));

    Graph<double> g;
    OracleNet online(g);
    const NodeId in1 = g.constant(x1), in2 = g.constant(x2);
    const NodeId z1 = online.encoder(model, in1, true, OracleNorm::kUpdateRunning);
    const NodeId z2 = online.encoder(model, in2, true, OracleNorm::kUpdateRunning);
    auto q = [&](NodeId z) {
      const NodeId h = online.head(model.proj, z, 3, true, OracleNorm::kUpdateRunning);
      return g.l2_normalize(online.head(model.pred, h, 2, true, OracleNorm::kUpdateRunning), 1e-12);
    };
    const NodeId q1 = q(z1), q2 = q(z2);
    OracleNet tgt(g);
    auto k = [&](NodeId in) {
      const NodeId z = tgt.encoder(target, in, false, OracleNorm::kBatchOnly);
      return g.l2_normalize(tgt.head(target.proj, z, 3, false, OracleNorm::kBatchOnly), 1e-12);
    };
    const NodeId k1 = k(in1), k2 = k(in2);
    NodeId loss = g.add(online.nce(q1, k2, tau), online.nce(q2, k1, tau));
    if (global != nullptr && cfg.align_weight > 0) {
      ModelState<double> snap = *global;
      OracleNet gl(g);
      NodeId g1 = gl.encoder(snap, in1, false, OracleNorm::kBatchOnly);
      NodeId g2 = gl.encoder(snap, in2, false, OracleNorm::kBatchOnly);
      NodeId l1 = z1, l2 = z2;
      if (cfg.normalize_alignment) {
        l1 = g.l2_normalize(l1, 1e-12);
        l2 = g.l2_normalize(l2, 1e-12);
        g1 = g.l2_normalize(g1, 1e-12);
        g2 = g.l2_normalize(g2, 1e-12);
      }
      const NodeId align = g.add(online.nce(l1, g2, tau), online.nce(l2, g1, tau));
      loss = g.add(loss, g.scale(align, cfg.align_weight));
    }
    const auto grads = g.backward(loss);
    for (const auto& [key, entry] : online.params()) opt.update(key, entry.second->value, grads.at(entry.first), lr);

    const double mu = cfg.momentum;
    auto ema = [&](const ParamGroup<double>& o, ParamGroup<double>& t) {
      for (std::size_t i = 0; i < o.tensors.size(); ++i) {
        if (!t.tensors[i].trainable) continue;
        for (std::size_t j = 0; j < o.tensors[i].value.size(); ++j) {
          t.tensors[i].value[j] = mu * t.tensors[i].value[j] + (1 - mu) * o.tensors[i].value[j];
        }
      }
    };
    for (std::size_t l = 0; l < model.encoder.size(); ++l) ema(model.encoder[l], target.encoder[l]);
    ema(model.proj, target.proj);
  }
}

}  // namespace lwfs::test
