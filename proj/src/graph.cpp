#include "lwfs/graph.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>

namespace lwfs {

namespace {

constexpr std::array<std::pair<OpKind, std::string_view>, 19> kOpNames{{
    {OpKind::kConstant, "constant"},
    {OpKind::kParameter, "parameter"},
    {OpKind::kMatmul, "matmul"},
    {OpKind::kTranspose, "transpose"},
    {OpKind::kAdd, "add"},
    {OpKind::kSub, "sub"},
    {OpKind::kMul, "mul"},
    {OpKind::kScale, "scale"},
    {OpKind::kAddScalar, "add_scalar"},
    {OpKind::kAddRow, "add_row"},
    {OpKind::kRelu, "relu"},
    {OpKind::kGelu, "gelu"},
    {OpKind::kL2Normalize, "l2_normalize"},
    {OpKind::kBatchNormTrain, "batch_norm_train"},
    {OpKind::kBatchNormEval, "batch_norm_eval"},
    {OpKind::kSum, "sum"},
    {OpKind::kMean, "mean"},
    {OpKind::kCrossEntropy, "cross_entropy"},
    {OpKind::kStopGradient, "stop_gradient"},
}};

constexpr std::array<OpKind, 16> kDifferentiable{
    OpKind::kMatmul,         OpKind::kTranspose,     OpKind::kAdd,    OpKind::kSub,
    OpKind::kMul,            OpKind::kScale,         OpKind::kAddScalar, OpKind::kAddRow,
    OpKind::kRelu,           OpKind::kGelu,          OpKind::kL2Normalize, OpKind::kBatchNormTrain,
    OpKind::kBatchNormEval,  OpKind::kSum,           OpKind::kMean,   OpKind::kCrossEntropy,
};

std::atomic<int> g_corrupted{-1};

template <typename T>
void accumulate(std::optional<Tensor<T>>& slot, const Tensor<T>& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void require_matrix(const char* op, const Tensor<T>& a) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <typename T>
T gelu_value(T x) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T u = c * (x + static_cast<T>(0.044715) * x * x * x);
  return static_cast<T>(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
T gelu_derivative(T x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T k = static_cast<T>(0.044715);
  const T u = c * (x + k * x * x * x);
  const T th = std::tanh(u);
  return static_cast<T>(0.5) * (T(1) + th) +
         static_cast<T>(0.5) * x * (T(1) - th * th) * c * (T(1) + T(3) * k * x * x);
}

}  // namespace

std::string_view op_name(OpKind kind) {
  for (const auto& [k, name] : kOpNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::optional<OpKind> op_from_name(std::string_view name) {
  for (const auto& [k, n] : kOpNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

std::span<const OpKind> differentiable_ops() { return kDifferentiable; }

namespace testing {
void set_corrupted_op(std::optional<OpKind> kind) { g_corrupted = kind ? static_cast<int>(*kind) : -1; }
std::optional<OpKind> corrupted_op() {
  const int v = g_corrupted.load();
  if (v < 0) return std::nullopt;
  return static_cast<OpKind>(v);
}
}  // namespace testing

template <typename T>
Tensor<T> matmul_plain(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
Tensor<T> transpose_plain(const Tensor<T>& a) {
  require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> t({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) t.at(j, i) = a.at(i, j);
  }
  return t;
}

template <typename T>
void Graph<T>::check(NodeId id) const {
  if (id.index >= nodes_.size()) throw ContractError("node id " + std::to_string(id.index) + " not in graph");
}

template <typename T>
bool Graph<T>::any_requires_grad(std::initializer_list<NodeId> ids) const {
  for (auto id : ids) {
    check(id);
    if (nodes_[id.index].requires_grad) return true;
  }
  return false;
}

template <typename T>
NodeId Graph<T>::push(OpKind kind, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn fn) {
  Node node{kind, std::move(inputs), std::move(value), false, {}};
  for (auto in : node.inputs) node.requires_grad = node.requires_grad || nodes_[in.index].requires_grad;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> value) {
  nodes_.push_back(Node{OpKind::kConstant, {}, std::move(value), false, {}});
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
NodeId Graph<T>::parameter(Tensor<T> value) {
  nodes_.push_back(Node{OpKind::kParameter, {}, std::move(value), true, {}});
  NodeId id{static_cast<std::uint32_t>(nodes_.size() - 1)};
  params_.push_back(id);
  return id;
}

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b) {
  check(a);
  check(b);
  Tensor<T> out = matmul_plain(value(a), value(b));
  return push(OpKind::kMatmul, {a, b}, std::move(out), [this, a, b](const Tensor<T>& g, GradSlots& grads) {
    if (requires_grad(a)) accumulate(grads[a.index], matmul_plain(g, transpose_plain(value(b))));
    if (requires_grad(b)) accumulate(grads[b.index], matmul_plain(transpose_plain(value(a)), g));
  });
}

template <typename T>
NodeId Graph<T>::transpose(NodeId a) {
  check(a);
  return push(OpKind::kTranspose, {a}, transpose_plain(value(a)),
              [a](const Tensor<T>& g, GradSlots& grads) { accumulate(grads[a.index], transpose_plain(g)); });
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape("add", value(a), value(b));
  Tensor<T> out = value(a);
  auto o = out.data();
  auto bv = value(b).data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return push(OpKind::kAdd, {a, b}, std::move(out), [this, a, b](const Tensor<T>& g, GradSlots& grads) {
    if (requires_grad(a)) accumulate(grads[a.index], g);
    if (requires_grad(b)) accumulate(grads[b.index], g);
  });
}

template <typename T>
NodeId Graph<T>::sub(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape("sub", value(a), value(b));
  Tensor<T> out = value(a);
  auto o = out.data();
  auto bv = value(b).data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return push(OpKind::kSub, {a, b}, std::move(out), [this, a, b](const Tensor<T>& g, GradSlots& grads) {
    if (requires_grad(a)) accumulate(grads[a.index], g);
    if (requires_grad(b)) {
      Tensor<T> neg = g;
      for (auto& v : neg.data()) v = -v;
      accumulate(grads[b.index], neg);
    }
  });
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  check(a);
  check(b);
  require_same_shape("mul", value(a), value(b));
  Tensor<T> out = value(a);
  auto o = out.data();
  auto bv = value(b).data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return push(OpKind::kMul, {a, b}, std::move(out), [this, a, b](const Tensor<T>& g, GradSlots& grads) {
    if (requires_grad(a)) {
      Tensor<T> ga = g;
      auto bv = value(b).data();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
      accumulate(grads[a.index], ga);
    }
    if (requires_grad(b)) {
      Tensor<T> gb = g;
      auto av = value(a).data();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
      accumulate(grads[b.index], gb);
    }
  });
}

template <typename T>
NodeId Graph<T>::scale(NodeId a, T factor) {
  check(a);
  Tensor<T> out = value(a);
  for (auto& v : out.data()) v *= factor;
  return push(OpKind::kScale, {a}, std::move(out), [a, factor](const Tensor<T>& g, GradSlots& grads) {
    Tensor<T> ga = g;
    for (auto& v : ga.data()) v *= factor;
    accumulate(grads[a.index], ga);
  });
}

template <typename T>
NodeId Graph<T>::add_scalar(NodeId a, T offset) {
  check(a);
  Tensor<T> out = value(a);
  for (auto& v : out.data()) v += offset;
  return push(OpKind::kAddScalar, {a}, std::move(out),
              [a](const Tensor<T>& g, GradSlots& grads) { accumulate(grads[a.index], g); });
}

template <typename T>
NodeId Graph<T>::add_row(NodeId x, NodeId bias) {
  check(x);
  check(bias);
  const auto& xv = value(x);
  const auto& bv = value(bias);
  require_matrix("add_row", xv);
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_row: bias " + shape_str(bv.shape()) + " does not match " + shape_str(xv.shape()));
  }
  Tensor<T> out = xv;
  const std::size_t c = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) += bv[j];
  }
  return push(OpKind::kAddRow, {x, bias}, std::move(out), [this, x, bias](const Tensor<T>& g, GradSlots& grads) {
    if (requires_grad(x)) accumulate(grads[x.index], g);
    if (requires_grad(bias)) {
      Tensor<T> gb = Tensor<T>::zeros_like(value(bias));
      const std::size_t c = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        for (std::size_t j = 0; j < c; ++j) gb[j] += g.at(r, j);
      }
      accumulate(grads[bias.index], gb);
    }
  });
}

template <typename T>
NodeId Graph<T>::relu(NodeId a) {
  check(a);
  Tensor<T> out = value(a);
  std::vector<bool> mask(out.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = out[i] > T(0);
    if (!mask[i]) out[i] = T(0);
  }
  return push(OpKind::kRelu, {a}, std::move(out),
              [a, mask = std::move(mask)](const Tensor<T>& g, GradSlots& grads) {
                Tensor<T> ga = g;
                for (std::size_t i = 0; i < ga.size(); ++i) {
                  if (!mask[i]) ga[i] = T(0);
                }
                accumulate(grads[a.index], ga);
              });
}

template <typename T>
NodeId Graph<T>::gelu(NodeId a) {
  check(a);
  Tensor<T> out = value(a);
  for (auto& v : out.data()) v = gelu_value(v);
  return push(OpKind::kGelu, {a}, std::move(out), [this, a](const Tensor<T>& g, GradSlots& grads) {
    Tensor<T> ga = g;
    const auto& xv = value(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= gelu_derivative(xv[i]);
    accumulate(grads[a.index], ga);
  });
}

template <typename T>
NodeId Graph<T>::l2_normalize(NodeId x, T eps) {
  check(x);
  const auto& xv = value(x);
  require_matrix("l2_normalize", xv);
  if (!(eps > T(0))) throw ContractError("l2_normalize: eps must be positive");
  const std::size_t rows = xv.rows(), c = xv.cols();
  Tensor<T> out = xv;
  std::vector<T> denom(rows);
  std::vector<bool> clamped(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t j = 0; j < c; ++j) ss += xv.at(r, j) * xv.at(r, j);
    const T n = std::sqrt(ss);
    clamped[r] = n < eps;
    denom[r] = clamped[r] ? eps : n;
    for (std::size_t j = 0; j < c; ++j) out.at(r, j) /= denom[r];
  }
  const NodeId id = push(OpKind::kL2Normalize, {x}, std::move(out), {});
  if (nodes_.back().requires_grad) {
    nodes_.back().backward = [this, x, id, denom = std::move(denom), clamped = std::move(clamped)](
                                 const Tensor<T>& g, GradSlots& grads) {
      const auto& y = value(id);
      Tensor<T> gx = g;
      const std::size_t c = g.cols();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        if (clamped[r]) {
          for (std::size_t j = 0; j < c; ++j) gx.at(r, j) = g.at(r, j) / denom[r];
          continue;
        }
        T dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += y.at(r, j) * g.at(r, j);
        for (std::size_t j = 0; j < c; ++j) gx.at(r, j) = (g.at(r, j) - y.at(r, j) * dot) / denom[r];
      }
      accumulate(grads[x.index], gx);
    };
  }
  return id;
}

template <typename T>
NodeId Graph<T>::batch_norm_train(NodeId x, NodeId gamma, NodeId beta, T eps, BatchStats<T>* stats) {
  check(x);
  check(gamma);
  check(beta);
  const auto& xv = value(x);
  require_matrix("batch_norm_train", xv);
  const std::size_t b = xv.rows(), d = xv.cols();
  if (b < 2) throw ContractError("batch_norm_train: batch too small (B=" + std::to_string(b) + ", need >= 2)");
  if (value(gamma).size() != d || value(beta).size() != d) {
    throw DimensionError("batch_norm_train: affine params do not match " + shape_str(xv.shape()));
  }
  Tensor<T> mean({d}), var({d});
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += xv.at(r, j);
  }
  for (auto& m : mean.data()) m /= static_cast<T>(b);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      const T c = xv.at(r, j) - mean[j];
      var[j] += c * c;
    }
  }
  for (auto& v : var.data()) v /= static_cast<T>(b);
  Tensor<T> inv_std({d});
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = T(1) / std::sqrt(var[j] + eps);
  Tensor<T> xhat({b, d});
  Tensor<T> out({b, d});
  const auto& gv = value(gamma);
  const auto& bv = value(beta);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(r, j) = (xv.at(r, j) - mean[j]) * inv_std[j];
      out.at(r, j) = gv[j] * xhat.at(r, j) + bv[j];
    }
  }
  if (stats) *stats = BatchStats<T>{mean, var};
  return push(OpKind::kBatchNormTrain, {x, gamma, beta}, std::move(out),
              [this, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor<T>& g,
                                                                                         GradSlots& grads) {
                const std::size_t b = g.rows(), d = g.cols();
                const auto& gv = value(gamma);
                Tensor<T> sum_g({d}), sum_gx({d});
                for (std::size_t r = 0; r < b; ++r) {
                  for (std::size_t j = 0; j < d; ++j) {
                    sum_g[j] += g.at(r, j);
                    sum_gx[j] += g.at(r, j) * xhat.at(r, j);
                  }
                }
                if (requires_grad(beta)) accumulate(grads[beta.index], sum_g);
                if (requires_grad(gamma)) accumulate(grads[gamma.index], sum_gx);
                if (requires_grad(x)) {
                  Tensor<T> gx({b, d});
                  const T inv_b = T(1) / static_cast<T>(b);
                  for (std::size_t r = 0; r < b; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                      // dxhat = g * gamma; sums of dxhat factor through gamma.
                      gx.at(r, j) = gv[j] * inv_std[j] * inv_b *
                                    (static_cast<T>(b) * g.at(r, j) - sum_g[j] - xhat.at(r, j) * sum_gx[j]);
                    }
                  }
                  accumulate(grads[x.index], gx);
                }
              });
}

template <typename T>
NodeId Graph<T>::batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const Tensor<T>& running_mean,
                                 const Tensor<T>& running_var, T eps) {
  check(x);
  check(gamma);
  check(beta);
  const auto& xv = value(x);
  require_matrix("batch_norm_eval", xv);
  const std::size_t b = xv.rows(), d = xv.cols();
  if (value(gamma).size() != d || value(beta).size() != d || running_mean.size() != d || running_var.size() != d) {
    throw DimensionError("batch_norm_eval: parameters do not match " + shape_str(xv.shape()));
  }
  Tensor<T> inv_std({d});
  for (std::size_t j = 0; j < d; ++j) inv_std[j] = T(1) / std::sqrt(running_var[j] + eps);
  Tensor<T> xhat({b, d});
  Tensor<T> out({b, d});
  const auto& gv = value(gamma);
  const auto& bv = value(beta);
  for (std::size_t r = 0; r < b; ++r) {
    for (std::size_t j = 0; j < d; ++j) {
      xhat.at(r, j) = (xv.at(r, j) - running_mean[j]) * inv_std[j];
      out.at(r, j) = gv[j] * xhat.at(r, j) + bv[j];
    }
  }
  return push(OpKind::kBatchNormEval, {x, gamma, beta}, std::move(out),
              [this, x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor<T>& g,
                                                                                         GradSlots& grads) {
                const std::size_t b = g.rows(), d = g.cols();
                const auto& gv = value(gamma);
                if (requires_grad(beta) || requires_grad(gamma)) {
                  Tensor<T> sum_g({d}), sum_gx({d});
                  for (std::size_t r = 0; r < b; ++r) {
                    for (std::size_t j = 0; j < d; ++j) {
                      sum_g[j] += g.at(r, j);
                      sum_gx[j] += g.at(r, j) * xhat.at(r, j);
                    }
                  }
                  if (requires_grad(beta)) accumulate(grads[beta.index], sum_g);
                  if (requires_grad(gamma)) accumulate(grads[gamma.index], sum_gx);
                }
                if (requires_grad(x)) {
                  Tensor<T> gx({b, d});
                  for (std::size_t r = 0; r < b; ++r) {
                    for (std::size_t j = 0; j < d; ++j) gx.at(r, j) = g.at(r, j) * gv[j] * inv_std[j];
                  }
                  accumulate(grads[x.index], gx);
                }
              });
}

template <typename T>
NodeId Graph<T>::sum(NodeId a) {
  check(a);
  T acc = 0;
  for (T v : value(a).data()) acc += v;
  return push(OpKind::kSum, {a}, Tensor<T>::scalar(acc), [this, a](const Tensor<T>& g, GradSlots& grads) {
    accumulate(grads[a.index], Tensor<T>(value(a).shape(), g[0]));
  });
}

template <typename T>
NodeId Graph<T>::mean(NodeId a) {
  check(a);
  T acc = 0;
  for (T v : value(a).data()) acc += v;
  const T n = static_cast<T>(value(a).size());
  return push(OpKind::kMean, {a}, Tensor<T>::scalar(acc / n), [this, a, n](const Tensor<T>& g, GradSlots& grads) {
    accumulate(grads[a.index], Tensor<T>(value(a).shape(), g[0] / n));
  });
}

template <typename T>
NodeId Graph<T>::cross_entropy(NodeId logits, std::vector<std::size_t> targets) {
  check(logits);
  const auto& z = value(logits);
  require_matrix("cross_entropy", z);
  const std::size_t b = z.rows(), c = z.cols();
  if (targets.size() != b) throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + shape_str(z.shape()));
  Tensor<T> probs({b, c});
  T loss = 0;
  for (std::size_t r = 0; r < b; ++r) {
    if (targets[r] >= c) throw ContractError("cross_entropy: target out of range");
    T mx = z.at(r, 0);
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z.at(r, j));
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      probs.at(r, j) = std::exp(z.at(r, j) - mx);
      s += probs.at(r, j);
    }
    for (std::size_t j = 0; j < c; ++j) probs.at(r, j) /= s;
    loss += (mx + std::log(s)) - z.at(r, targets[r]);
  }
  loss /= static_cast<T>(b);
  return push(OpKind::kCrossEntropy, {logits}, Tensor<T>::scalar(loss),
              [logits, probs = std::move(probs), targets = std::move(targets)](const Tensor<T>& g, GradSlots& grads) {
                Tensor<T> gz = probs;
                const std::size_t b = gz.rows();
                for (std::size_t r = 0; r < b; ++r) gz.at(r, targets[r]) -= T(1);
                const T f = g[0] / static_cast<T>(b);
                for (auto& v : gz.data()) v *= f;
                accumulate(grads[logits.index], gz);
              });
}

template <typename T>
NodeId Graph<T>::stop_gradient(NodeId a) {
  check(a);
  nodes_.push_back(Node{OpKind::kStopGradient, {a}, value(a), false, {}});
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <typename T>
typename Graph<T>::Grads Graph<T>::backward(NodeId loss) const {
  check(loss);
  if (value(loss).size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(value(loss).shape()));
  }
  return backward(loss, Tensor<T>(value(loss).shape(), T(1)));
}

template <typename T>
typename Graph<T>::Grads Graph<T>::backward(NodeId output, const Tensor<T>& seed) const {
  check(output);
  if (seed.shape() != value(output).shape()) {
    throw DimensionError("backward: seed " + shape_str(seed.shape()) + " vs output " + shape_str(value(output).shape()));
  }
  GradSlots grads(nodes_.size());
  grads[output.index] = seed;
  const auto corrupted = testing::corrupted_op();
  for (std::size_t i = output.index + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!grads[i] || !node.backward) continue;
    if (corrupted && *corrupted == node.kind) {
      Tensor<T> g = *grads[i];
      for (auto& v : g.data()) v *= static_cast<T>(1.5);
      node.backward(g, grads);
    } else {
      node.backward(*grads[i], grads);
    }
  }
  Grads out;
  for (auto p : params_) {
    auto& slot = grads[p.index];
    out.emplace(p, slot ? std::move(*slot) : Tensor<T>::zeros_like(value(p)));
  }
  return out;
}

template class Graph<float>;
template class Graph<double>;
template Tensor<float> matmul_plain(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul_plain(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> transpose_plain(const Tensor<float>&);
template Tensor<double> transpose_plain(const Tensor<double>&);

}  // namespace lwfs
