#include "lwfs/model.hpp"

#include <cmath>

#include "lwfs/rng.hpp"

namespace lwfs {

void ModelSpec::validate() const {
  if (num_layers < 1) throw ConfigError("model: num_layers must be >= 1");
  if (input_dim < 1 || block_hidden_dim < 1 || block_out_dim < 1 || proj_hidden < 1 || proj_out < 1 ||
      pred_hidden < 1) {
    throw ConfigError("model: all dimensions must be >= 1");
  }
}

template <typename T>
NamedTensor<T>& ParamGroup<T>::get(std::string_view tensor_name) {
  for (auto& t : tensors) {
    if (t.name == tensor_name) return t;
  }
  throw ContractError("group '" + name + "' has no tensor '" + std::string(tensor_name) + "'");
}

template <typename T>
const NamedTensor<T>& ParamGroup<T>::get(std::string_view tensor_name) const {
  return const_cast<ParamGroup*>(this)->get(tensor_name);
}

template <typename T>
std::size_t ParamGroup<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

template <typename T>
std::size_t ParamGroup<T>::trainable_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) {
    if (t.trainable) n += t.value.size();
  }
  return n;
}

template <typename T>
bool ParamGroup<T>::bitwise_equal(const ParamGroup& other) const {
  if (name != other.name || tensors.size() != other.tensors.size()) return false;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (tensors[i].name != other.tensors[i].name || !tensors[i].value.bitwise_equal(other.tensors[i].value)) {
      return false;
    }
  }
  return true;
}

// Batch norm: gamma, beta (trainable) plus running mean/var.
std::size_t block_scalar_count(const ModelSpec& s, std::size_t layer) {
  const std::size_t in = s.block_in_dim(layer);
  return 4 * in + in * s.block_hidden_dim + s.block_hidden_dim + s.block_hidden_dim * s.block_out_dim +
         s.block_out_dim;
}

std::size_t block_trainable_count(const ModelSpec& s, std::size_t layer) {
  return block_scalar_count(s, layer) - 2 * s.block_in_dim(layer);
}

// Head linears carry no bias; every linear is followed by batch norm.
std::size_t proj_scalar_count(const ModelSpec& s) {
  return s.block_out_dim * s.proj_hidden + 4 * s.proj_hidden + s.proj_hidden * s.proj_hidden + 4 * s.proj_hidden +
         s.proj_hidden * s.proj_out + 4 * s.proj_out;
}

std::size_t proj_trainable_count(const ModelSpec& s) {
  return proj_scalar_count(s) - 2 * (2 * s.proj_hidden + s.proj_out);
}

std::size_t pred_scalar_count(const ModelSpec& s) {
  return s.proj_out * s.pred_hidden + 4 * s.pred_hidden + s.pred_hidden * s.proj_out + 4 * s.proj_out;
}

std::size_t pred_trainable_count(const ModelSpec& s) {
  return pred_scalar_count(s) - 2 * (s.pred_hidden + s.proj_out);
}

template <typename T>
std::size_t ModelState<T>::scalar_count() const {
  std::size_t n = proj.scalar_count() + pred.scalar_count();
  for (const auto& g : encoder) n += g.scalar_count();
  return n;
}

template <typename T>
std::size_t ModelState<T>::trainable_count() const {
  std::size_t n = proj.trainable_count() + pred.trainable_count();
  for (const auto& g : encoder) n += g.trainable_count();
  return n;
}

template <typename T>
bool ModelState<T>::bitwise_equal(const ModelState& other) const {
  if (!(spec == other.spec) || init_seed != other.init_seed || frozen_prefix != other.frozen_prefix ||
      encoder.size() != other.encoder.size()) {
    return false;
  }
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    if (!encoder[i].bitwise_equal(other.encoder[i])) return false;
  }
  return proj.bitwise_equal(other.proj) && pred.bitwise_equal(other.pred);
}

template <typename T>
std::vector<const ParamGroup<T>*> ModelState<T>::groups() const {
  std::vector<const ParamGroup<T>*> out;
  for (const auto& g : encoder) out.push_back(&g);
  out.push_back(&proj);
  out.push_back(&pred);
  return out;
}

template <typename T>
std::vector<ParamGroup<T>*> ModelState<T>::groups() {
  std::vector<ParamGroup<T>*> out;
  for (auto& g : encoder) out.push_back(&g);
  out.push_back(&proj);
  out.push_back(&pred);
  return out;
}

namespace {

template <typename T>
Tensor<T> xavier(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<T> w({fan_in, fan_out});
  for (auto& v : w.data()) v = static_cast<T>(dist(rng));
  return w;
}

template <typename T>
void push_norm(ParamGroup<T>& g, const std::string& prefix, std::size_t dim) {
  g.tensors.push_back({prefix + ".gamma", Tensor<T>::ones({dim}), true});
  g.tensors.push_back({prefix + ".beta", Tensor<T>::zeros({dim}), true});
  g.tensors.push_back({prefix + ".running_mean", Tensor<T>::zeros({dim}), false});
  g.tensors.push_back({prefix + ".running_var", Tensor<T>::ones({dim}), false});
}

template <typename T>
ParamGroup<T> init_head(const std::string& name, const std::vector<std::size_t>& dims, std::uint64_t seed) {
  Rng rng(seed);
  ParamGroup<T> g{name, {}};
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::string prefix = "l" + std::to_string(i + 1);
    g.tensors.push_back({prefix + ".weight", xavier<T>(dims[i], dims[i + 1], rng), true});
    push_norm(g, prefix + ".norm", dims[i + 1]);
  }
  return g;
}

template <typename T>
NodeId bind_norm(ParamBinder<T>& binder, ParamGroup<T>& group, const std::string& prefix, NodeId x, bool trainable,
                 NormMode norm) {
  Graph<T>& g = binder.graph();
  const NodeId gamma = binder.bind(group.name, group.get(prefix + ".gamma"), trainable);
  const NodeId beta = binder.bind(group.name, group.get(prefix + ".beta"), trainable);
  auto& rm = group.get(prefix + ".running_mean").value;
  auto& rv = group.get(prefix + ".running_var").value;
  const T eps = static_cast<T>(kBatchNormEps);
  if (norm == NormMode::kEval) return g.batch_norm_eval(x, gamma, beta, rm, rv, eps);
  BatchStats<T> stats;
  const NodeId y = g.batch_norm_train(x, gamma, beta, eps, norm == NormMode::kTrain ? &stats : nullptr);
  if (norm == NormMode::kTrain) {
    const T m = static_cast<T>(kRunningMomentum);
    for (std::size_t j = 0; j < rm.size(); ++j) {
      rm[j] = m * rm[j] + (T(1) - m) * stats.mean[j];
      rv[j] = m * rv[j] + (T(1) - m) * stats.var[j];
    }
  }
  return y;
}

template <typename T>
NodeId forward_head(ParamBinder<T>& binder, ParamGroup<T>& head, NodeId x, bool trainable, NormMode norm,
                    std::size_t layers) {
  Graph<T>& g = binder.graph();
  NodeId h = x;
  for (std::size_t i = 1; i <= layers; ++i) {
    const std::string prefix = "l" + std::to_string(i);
    h = g.matmul(h, binder.bind(head.name, head.get(prefix + ".weight"), trainable));
    h = bind_norm(binder, head, prefix + ".norm", h, trainable, norm);
    if (i < layers) h = g.relu(h);
  }
  return h;
}

}  // namespace

template <typename T>
ParamGroup<T> init_encoder_layer(const ModelSpec& spec, std::size_t layer, std::uint64_t seed) {
  if (layer < 1 || layer > spec.num_layers) throw ContractError("encoder layer index out of range");
  Rng rng(mix_seed(seed, {seed_tag::kEncoderLayer, layer}));
  const std::size_t in = spec.block_in_dim(layer);
  ParamGroup<T> g{"encoder." + std::to_string(layer), {}};
  push_norm(g, "norm", in);
  g.tensors.push_back({"fc1.weight", xavier<T>(in, spec.block_hidden_dim, rng), true});
  g.tensors.push_back({"fc1.bias", Tensor<T>::zeros({spec.block_hidden_dim}), true});
  g.tensors.push_back({"fc2.weight", xavier<T>(spec.block_hidden_dim, spec.block_out_dim, rng), true});
  g.tensors.push_back({"fc2.bias", Tensor<T>::zeros({spec.block_out_dim}), true});
  return g;
}

template <typename T>
ModelState<T> build_model(const ModelSpec& spec, std::uint64_t seed, std::size_t active_depth) {
  spec.validate();
  if (active_depth > spec.num_layers) throw ContractError("build_model: active depth exceeds num_layers");
  ModelState<T> m;
  m.spec = spec;
  m.init_seed = seed;
  for (std::size_t l = 1; l <= active_depth; ++l) m.encoder.push_back(init_encoder_layer<T>(spec, l, seed));
  m.proj = init_head<T>("proj", {spec.block_out_dim, spec.proj_hidden, spec.proj_hidden, spec.proj_out},
                        mix_seed(seed, {seed_tag::kProjHead}));
  m.pred = init_head<T>("pred", {spec.proj_out, spec.pred_hidden, spec.proj_out}, mix_seed(seed, {seed_tag::kPredHead}));
  return m;
}

template <typename T>
NodeId ParamBinder<T>::bind(const std::string& group_name, NamedTensor<T>& tensor, bool trainable) {
  if (auto it = cache_.find(&tensor); it != cache_.end()) {
    if (graph_.requires_grad(it->second) != (trainable && tensor.trainable)) {
      throw ContractError("tensor " + group_name + "/" + tensor.name + " bound both as parameter and constant");
    }
    return it->second;
  }
  NodeId id;
  if (!trainable || !tensor.trainable) {
    id = graph_.constant(tensor.value);
  } else {
    id = graph_.parameter(tensor.value);
    bindings_.push_back({id, group_name + "/" + tensor.name, &tensor});
  }
  cache_.emplace(&tensor, id);
  return id;
}

template <typename T>
NodeId forward_block(ParamBinder<T>& binder, ParamGroup<T>& layer, NodeId x, bool trainable, NormMode norm) {
  Graph<T>& g = binder.graph();
  NodeId h = bind_norm(binder, layer, "norm", x, trainable, norm);
  h = g.add_row(g.matmul(h, binder.bind(layer.name, layer.get("fc1.weight"), trainable)),
                binder.bind(layer.name, layer.get("fc1.bias"), trainable));
  h = g.gelu(h);
  h = g.add_row(g.matmul(h, binder.bind(layer.name, layer.get("fc2.weight"), trainable)),
                binder.bind(layer.name, layer.get("fc2.bias"), trainable));
  if (g.value(x).shape() == g.value(h).shape()) h = g.add(x, h);
  return h;
}

template <typename T>
NodeId forward_encoder(ParamBinder<T>& binder, ModelState<T>& model, NodeId x, std::size_t depth, PassMode mode) {
  if (depth < 1 || depth > model.active_depth()) {
    throw ContractError("forward_encoder: depth " + std::to_string(depth) + " outside [1, " +
                        std::to_string(model.active_depth()) + "]");
  }
  if (binder.graph().value(x).cols() != model.spec.input_dim) {
    throw ContractError("forward_encoder: input has " + std::to_string(binder.graph().value(x).cols()) +
                        " features, model expects " + std::to_string(model.spec.input_dim));
  }
  NodeId h = x;
  for (std::size_t l = 1; l <= depth; ++l) {
    const bool frozen = l <= model.frozen_prefix;
    h = forward_block(binder, model.encoder[l - 1], h, mode.trainable && !frozen, frozen ? NormMode::kEval : mode.norm);
  }
  return h;
}

template <typename T>
NodeId forward_proj(ParamBinder<T>& binder, ParamGroup<T>& proj, NodeId z, bool trainable, NormMode norm) {
  return forward_head(binder, proj, z, trainable, norm, 3);
}

template <typename T>
NodeId forward_pred(ParamBinder<T>& binder, ParamGroup<T>& pred, NodeId h, bool trainable, NormMode norm) {
  return forward_head(binder, pred, h, trainable, norm, 2);
}

template <typename T>
Tensor<T> encode(const ModelState<T>& model, const Tensor<T>& x) {
  if (model.active_depth() == 0) throw ContractError("encode: model has no active layers");
  // Eval mode never mutates the model; the copy only satisfies the binder's
  // non-const interface.
  ModelState<T> copy = model;
  Graph<T> g;
  ParamBinder<T> binder(g);
  const NodeId out = forward_encoder(binder, copy, g.constant(x), copy.active_depth(), PassMode::inference());
  return g.value(out);
}

#define LWFS_INSTANTIATE(T)                                                                                   \
  template struct ParamGroup<T>;                                                                              \
  template struct ModelState<T>;                                                                              \
  template class ParamBinder<T>;                                                                              \
  template ParamGroup<T> init_encoder_layer<T>(const ModelSpec&, std::size_t, std::uint64_t);                 \
  template ModelState<T> build_model<T>(const ModelSpec&, std::uint64_t, std::size_t);                        \
  template NodeId forward_block(ParamBinder<T>&, ParamGroup<T>&, NodeId, bool, NormMode);                     \
  template NodeId forward_encoder(ParamBinder<T>&, ModelState<T>&, NodeId, std::size_t, PassMode);            \
  template NodeId forward_proj(ParamBinder<T>&, ParamGroup<T>&, NodeId, bool, NormMode);                      \
  template NodeId forward_pred(ParamBinder<T>&, ParamGroup<T>&, NodeId, bool, NormMode);                      \
  template Tensor<T> encode(const ModelState<T>&, const Tensor<T>&);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
