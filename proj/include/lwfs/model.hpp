#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lwfs/graph.hpp"
#include "lwfs/tensor.hpp"

namespace lwfs {

/// Encoder and head dimensions. Block 1 maps input_dim -> block_out_dim,
/// blocks 2..S map block_out_dim -> block_out_dim.
struct ModelSpec {
  std::size_t input_dim = 256;
  std::size_t num_layers = 3;
  std::size_t block_hidden_dim = 64;
  std::size_t block_out_dim = 32;
  std::size_t proj_hidden = 128;
  std::size_t proj_out = 32;
  std::size_t pred_hidden = 128;

  void validate() const;
  std::size_t block_in_dim(std::size_t layer) const { return layer == 1 ? input_dim : block_out_dim; }

  bool operator==(const ModelSpec&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> value;
  bool trainable = true;  // false for batch-norm running statistics
};

/// Ordered tensors forming one unit of exchange (an encoder layer or a head).
template <typename T>
struct ParamGroup {
  std::string name;
  std::vector<NamedTensor<T>> tensors;

  NamedTensor<T>& get(std::string_view tensor_name);
  const NamedTensor<T>& get(std::string_view tensor_name) const;
  /// All scalars, including running statistics.
  std::size_t scalar_count() const;
  std::size_t trainable_count() const;
  bool bitwise_equal(const ParamGroup& other) const;
};

/// Closed-form sizes, independent of any built model.
std::size_t block_scalar_count(const ModelSpec& spec, std::size_t layer);
std::size_t block_trainable_count(const ModelSpec& spec, std::size_t layer);
std::size_t proj_scalar_count(const ModelSpec& spec);
std::size_t proj_trainable_count(const ModelSpec& spec);
std::size_t pred_scalar_count(const ModelSpec& spec);
std::size_t pred_trainable_count(const ModelSpec& spec);

/// Online model: encoder layers L_1..L_s (s = active depth) plus the
/// projection head H and prediction head P.
template <typename T>
struct ModelState {
  ModelSpec spec;
  std::uint64_t init_seed = 0;
  std::vector<ParamGroup<T>> encoder;
  ParamGroup<T> proj;
  ParamGroup<T> pred;
  std::size_t frozen_prefix = 0;

  std::size_t active_depth() const noexcept { return encoder.size(); }
  std::size_t scalar_count() const;
  std::size_t trainable_count() const;
  bool bitwise_equal(const ModelState& other) const;

  /// Groups in serialization order: encoder layers, then proj, then pred.
  std::vector<const ParamGroup<T>*> groups() const;
  std::vector<ParamGroup<T>*> groups();
};

/// Freshly initialized encoder layer `layer` (1-based); deterministic in
/// (seed, layer).
template <typename T>
ParamGroup<T> init_encoder_layer(const ModelSpec& spec, std::size_t layer, std::uint64_t seed);

/// Xavier-uniform weights, zero biases, unit batch-norm scale. `active_depth`
/// is 0 for staged strategies and S for end-to-end training.
template <typename T>
ModelState<T> build_model(const ModelSpec& spec, std::uint64_t seed, std::size_t active_depth);

enum class NormMode {
  kTrain,       // batch statistics, running estimates updated
  kBatchStats,  // batch statistics, running estimates untouched
  kEval,        // running estimates
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kRunningMomentum = 0.9;

/// Binds model tensors into a graph. Trainable bindings become graph
/// parameters; everything else enters as constants. A tensor bound twice
/// (e.g. once per view) maps to the same node.
template <typename T>
class ParamBinder {
 public:
  struct Binding {
    NodeId node;
    std::string key;
    NamedTensor<T>* tensor;
  };

  explicit ParamBinder(Graph<T>& graph) : graph_(graph) {}

  NodeId bind(const std::string& group_name, NamedTensor<T>& tensor, bool trainable);
  const std::vector<Binding>& trainable() const noexcept { return bindings_; }
  Graph<T>& graph() noexcept { return graph_; }

 private:
  Graph<T>& graph_;
  std::vector<Binding> bindings_;
  std::map<const NamedTensor<T>*, NodeId> cache_;
};

/// How a pass treats the layers beyond the frozen prefix. Frozen layers are
/// always constants evaluated with running statistics.
struct PassMode {
  bool trainable = false;
  NormMode norm = NormMode::kEval;

  static constexpr PassMode online() { return {true, NormMode::kTrain}; }
  static constexpr PassMode target() { return {false, NormMode::kBatchStats}; }
  static constexpr PassMode inference() { return {false, NormMode::kEval}; }
};

template <typename T>
NodeId forward_block(ParamBinder<T>& binder, ParamGroup<T>& layer, NodeId x, bool trainable, NormMode norm);

/// Blocks 1..depth. Requires 1 <= depth <= active depth.
template <typename T>
NodeId forward_encoder(ParamBinder<T>& binder, ModelState<T>& model, NodeId x, std::size_t depth, PassMode mode);

template <typename T>
NodeId forward_proj(ParamBinder<T>& binder, ParamGroup<T>& proj, NodeId z, bool trainable, NormMode norm);

template <typename T>
NodeId forward_pred(ParamBinder<T>& binder, ParamGroup<T>& pred, NodeId h, bool trainable, NormMode norm);

/// Tape-free evaluation of the encoder at full active depth in eval mode.
template <typename T>
Tensor<T> encode(const ModelState<T>& model, const Tensor<T>& x);

}  // namespace lwfs
