#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "lwfs/tensor.hpp"

namespace lwfs {

enum class OpKind : std::uint8_t {
  kConstant,
  kParameter,
  kMatmul,
  kTranspose,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddScalar,
  kAddRow,
  kRelu,
  kGelu,
  kL2Normalize,
  kBatchNormTrain,
  kBatchNormEval,
  kSum,
  kMean,
  kCrossEntropy,
  kStopGradient,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> op_from_name(std::string_view name);

/// Every op that registers a gradient rule. Leaves and stop_gradient are not
/// listed; the gradient checker covers each entry exactly once.
std::span<const OpKind> differentiable_ops();

struct NodeId {
  std::uint32_t index = 0;
  auto operator<=>(const NodeId&) const = default;
};

template <typename T>
struct BatchStats {
  Tensor<T> mean;
  Tensor<T> var;  // biased
};

namespace testing {
/// Scales the gradient rule of one op by 1.5. Negative control for the
/// gradient checker; never enabled outside tests and `gradcheck --corrupt-op`.
void set_corrupted_op(std::optional<OpKind> kind);
std::optional<OpKind> corrupted_op();
}  // namespace testing

/// Append-only tape for reverse-mode differentiation. Nodes are created in
/// topological order, so backward is a single reverse sweep.
template <typename T>
class Graph {
 public:
  using Grads = std::map<NodeId, Tensor<T>>;

  Graph() = default;
  // Backward closures refer back into the tape.
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  NodeId constant(Tensor<T> value);
  NodeId parameter(Tensor<T> value);

  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId a);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, T factor);
  NodeId add_scalar(NodeId a, T offset);
  /// x[B,d] + bias[d] broadcast over rows.
  NodeId add_row(NodeId x, NodeId bias);
  NodeId relu(NodeId a);
  /// tanh approximation.
  NodeId gelu(NodeId a);
  /// Each row divided by max(||row||, eps).
  NodeId l2_normalize(NodeId x, T eps);
  /// Batch statistics (biased variance). Batch stats are written to `stats`
  /// when given so the caller can update running estimates.
  NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, T eps, BatchStats<T>* stats = nullptr);
  NodeId batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const Tensor<T>& running_mean,
                         const Tensor<T>& running_var, T eps);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  /// Mean softmax cross-entropy of logits[B,C] against integer targets.
  NodeId cross_entropy(NodeId logits, std::vector<std::size_t> targets);
  NodeId stop_gradient(NodeId a);

  const Tensor<T>& value(NodeId id) const { return nodes_.at(id.index).value; }
  OpKind kind(NodeId id) const { return nodes_.at(id.index).kind; }
  bool requires_grad(NodeId id) const { return nodes_.at(id.index).requires_grad; }
  std::span<const NodeId> inputs(NodeId id) const { return nodes_.at(id.index).inputs; }
  std::size_t size() const noexcept { return nodes_.size(); }
  std::span<const NodeId> parameters() const noexcept { return params_; }

  /// Gradient of a scalar loss with respect to every parameter. Parameters
  /// that do not influence the loss get an all-zero tensor.
  Grads backward(NodeId loss) const;

  /// Vector-Jacobian product: backpropagates `seed` (shaped like `output`).
  Grads backward(NodeId output, const Tensor<T>& seed) const;

 private:
  using GradSlots = std::vector<std::optional<Tensor<T>>>;
  using BackwardFn = std::function<void(const Tensor<T>& grad_out, GradSlots& grads)>;

  struct Node {
    OpKind kind;
    std::vector<NodeId> inputs;
    Tensor<T> value;
    bool requires_grad = false;
    BackwardFn backward;
  };

  NodeId push(OpKind kind, std::vector<NodeId> inputs, Tensor<T> value, BackwardFn fn);
  bool any_requires_grad(std::initializer_list<NodeId> ids) const;
  void check(NodeId id) const;

  std::vector<Node> nodes_;
  std::vector<NodeId> params_;
};

/// Plain (tape-free) matrix product helpers shared by the graph and tests.
template <typename T>
Tensor<T> matmul_plain(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> transpose_plain(const Tensor<T>& a);

}  // namespace lwfs
