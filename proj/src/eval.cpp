#include "lwfs/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <nlohmann/json.hpp>

#include "lwfs/optim.hpp"
#include "lwfs/rng.hpp"

namespace lwfs {

void ProbeConfig::validate() const {
  if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
  if (!(base_lr > 0)) throw ConfigError("probe: base_lr must be > 0");
  if (weight_decay < 0) throw ConfigError("probe: weight_decay must be >= 0");
  if (!(test_fraction > 0 && test_fraction < 1)) throw ConfigError("probe: test_fraction must be in (0, 1)");
  if (warmup_epochs > epochs) throw ConfigError("probe: warmup_epochs exceeds epochs");
}

ProbeConfig default_fine_tune_config() {
  ProbeConfig c;
  c.epochs = 40;
  c.warmup_epochs = 10;
  c.base_lr = 1e-3;
  return c;
}

Split stratified_split(std::span<const int> labels, double test_fraction, std::uint64_t seed) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  Split s;
  for (auto& [label, idx] : by_class) {
    Rng rng(mix_seed(seed, {seed_tag::kProbe, static_cast<std::uint64_t>(label)}));
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    s.test.insert(s.test.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    s.train.insert(s.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<double> EvalReport::per_class_accuracy() const {
  std::vector<double> out(class_total.size(), 0.0);
  for (std::size_t c = 0; c < out.size(); ++c) {
    out[c] = class_total[c] == 0 ? 0.0 : static_cast<double>(class_correct[c]) / static_cast<double>(class_total[c]);
  }
  return out;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = mode;
  j["accuracy"] = accuracy;
  j["correct"] = correct;
  j["total"] = total;
  j["per_class_accuracy"] = per_class_accuracy();
  j["class_total"] = class_total;
  j["train_size"] = train_size;
  j["test_size"] = test_size;
  j["encoder_id"] = encoder_id;
  j["note"] = note;
  return j.dump(2);
}

namespace {

std::vector<std::size_t> check_labels(std::span<const int> labels, std::size_t rows, std::size_t& num_classes) {
  if (labels.size() != rows) throw ContractError("eval: one label per feature row required");
  int max_label = -1;
  for (int l : labels) {
    if (l < 0) throw ContractError("eval: negative label");
    max_label = std::max(max_label, l);
  }
  num_classes = static_cast<std::size_t>(max_label + 1);
  std::vector<std::size_t> out(labels.begin(), labels.end());
  return out;
}

void require_two_classes(std::span<const int> labels, const Split& split) {
  if (split.train.empty() || split.test.empty()) throw ConfigError("eval: empty train or test split");
  const int first = labels[split.train.front()];
  for (auto i : split.train) {
    if (labels[i] != first) return;
  }
  throw ConfigError("eval: train split holds a single class; a classifier needs at least two");
}

template <typename T>
std::size_t argmax_row(const Tensor<T>& logits, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < logits.cols(); ++c) {
    if (logits.at(r, c) > logits.at(r, best)) best = c;
  }
  return best;
}

template <typename T>
EvalReport score(const Tensor<T>& logits, std::span<const int> labels, const Split& split, std::size_t num_classes) {
  EvalReport rep;
  rep.class_correct.assign(num_classes, 0);
  rep.class_total.assign(num_classes, 0);
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    const int truth = labels[split.test[i]];
    const int pred = static_cast<int>(argmax_row(logits, i));
    rep.predictions.push_back(pred);
    rep.truth.push_back(truth);
    ++rep.class_total[static_cast<std::size_t>(truth)];
    if (pred == truth) {
      ++rep.correct;
      ++rep.class_correct[static_cast<std::size_t>(truth)];
    }
  }
  rep.total = split.test.size();
  rep.accuracy = static_cast<double>(rep.correct) / static_cast<double>(rep.total);
  rep.train_size = split.train.size();
  rep.test_size = split.test.size();
  return rep;
}

// Shuffled mini-batches over `n` rows; a trailing batch shorter than
// `min_batch` is dropped.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::size_t min_batch,
                                                    std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    const std::size_t end = std::min(n, i + batch);
    if (end - i < min_batch) break;
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

LrSchedule probe_schedule(const ProbeConfig& cfg, std::size_t batch, std::size_t steps_per_epoch) {
  LrSchedule s;
  s.kind = LrKind::kCosine;
  s.base_lr = cfg.base_lr;
  s.batch_size = batch;
  s.total_steps = std::max<std::size_t>(1, cfg.epochs * steps_per_epoch);
  s.warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  return s;
}

}  // namespace

template <typename T>
Tensor<T> extract_features(const ModelState<T>& encoder, const Dataset<T>& ds) {
  if (encoder.active_depth() == 0) throw ContractError("extract_features: encoder has no active layers");
  if (ds.dim() != encoder.spec.input_dim) {
    throw ContractError("extract_features: dataset dim " + std::to_string(ds.dim()) + " != encoder input_dim " +
                        std::to_string(encoder.spec.input_dim));
  }
  return encode(encoder, ds.features);
}

template <typename T>
EvalReport linear_probe(const Tensor<T>& features, std::span<const int> labels, const ProbeConfig& cfg,
                        const Split& split) {
  cfg.validate();
  if (features.rank() != 2) throw ContractError("linear_probe: features must be a matrix");
  std::size_t num_classes = 0;
  check_labels(labels, features.rows(), num_classes);
  require_two_classes(labels, split);
  const std::size_t d = features.cols();

  // Standardize with train-split statistics.
  std::vector<double> mu(d, 0.0), sd(d, 0.0);
  for (auto i : split.train) {
    for (std::size_t j = 0; j < d; ++j) mu[j] += static_cast<double>(features.at(i, j));
  }
  for (auto& m : mu) m /= static_cast<double>(split.train.size());
  for (auto i : split.train) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = static_cast<double>(features.at(i, j)) - mu[j];
      sd[j] += c * c;
    }
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(split.train.size())) + 1e-6;
  auto standardize = [&](std::span<const std::size_t> rows) {
    Tensor<T> out({rows.size(), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
      for (std::size_t j = 0; j < d; ++j) {
        out.at(r, j) = static_cast<T>((static_cast<double>(features.at(rows[r], j)) - mu[j]) / sd[j]);
      }
    }
    return out;
  };
  const Tensor<T> x_train = standardize(split.train);
  const Tensor<T> x_test = standardize(split.test);

  Tensor<T> w({d, num_classes});
  Tensor<T> b({num_classes});
  AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  const std::size_t batch = std::min(cfg.batch_size, split.train.size());
  const std::size_t steps_per_epoch = (split.train.size() + batch - 1) / batch;
  const LrSchedule sch = probe_schedule(cfg, batch, steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& rows : epoch_batches(split.train.size(), batch, 1, mix_seed(cfg.seed, {seed_tag::kShuffle, e}))) {
      std::vector<std::size_t> targets;
      for (auto r : rows) targets.push_back(static_cast<std::size_t>(labels[split.train[r]]));
      Graph<T> g;
      const NodeId wn = g.parameter(w);
      const NodeId bn = g.parameter(b);
      const NodeId loss = g.cross_entropy(g.add_row(g.matmul(g.constant(gather_rows(x_train, rows)), wn), bn),
                                          std::move(targets));
      const auto grads = g.backward(loss);
      const ParamUpdate<T> ups[] = {{"w", &w, &grads.at(wn)}, {"b", &b, &grads.at(bn)}};
      opt.step(ups, lr_at(sch, step++));
    }
  }

  Graph<T> g;
  const NodeId logits = g.add_row(g.matmul(g.constant(x_test), g.constant(w)), g.constant(b));
  EvalReport rep = score(g.value(logits), labels, split, num_classes);
  rep.mode = "linear_probe";
  return rep;
}

template <typename T>
EvalReport linear_probe(const Tensor<T>& features, std::span<const int> labels, const ProbeConfig& cfg) {
  return linear_probe(features, labels, cfg, stratified_split(labels, cfg.test_fraction, cfg.seed));
}

template <typename T>
EvalReport fine_tune(const ModelState<T>& encoder, const Dataset<T>& ds, const ProbeConfig& cfg, const Split& split) {
  cfg.validate();
  if (!ds.labeled()) throw ConfigError("fine_tune: dataset is unlabeled");
  if (encoder.active_depth() == 0) throw ContractError("fine_tune: encoder has no active layers");
  if (ds.dim() != encoder.spec.input_dim) throw ContractError("fine_tune: dataset dim does not match encoder");
  std::size_t num_classes = 0;
  check_labels(ds.labels, ds.size(), num_classes);
  require_two_classes(ds.labels, split);

  ModelState<T> model = encoder;
  model.frozen_prefix = 0;
  const std::size_t depth = model.active_depth();
  ParamGroup<T> head{"head",
                     {{"weight", Tensor<T>({model.spec.block_out_dim, num_classes}), true},
                      {"bias", Tensor<T>({num_classes}), true}}};
  const Tensor<T> x_train = gather_rows(ds.features, split.train);
  AdamW<T> opt(AdamWConfig{0.9, 0.999, 1e-8, cfg.weight_decay});
  // Batch norm needs at least two rows per batch.
  const std::size_t batch = std::max<std::size_t>(2, std::min(cfg.batch_size, split.train.size()));
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, split.train.size() / batch);
  const LrSchedule sch = probe_schedule(cfg, batch, steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& rows : epoch_batches(split.train.size(), batch, 2, mix_seed(cfg.seed, {seed_tag::kShuffle, e}))) {
      std::vector<std::size_t> targets;
      for (auto r : rows) targets.push_back(static_cast<std::size_t>(ds.labels[split.train[r]]));
      Graph<T> g;
      ParamBinder<T> binder(g);
      const NodeId z = forward_encoder(binder, model, g.constant(gather_rows(x_train, rows)), depth, PassMode::online());
      const NodeId logits = g.add_row(g.matmul(z, binder.bind(head.name, head.get("weight"), true)),
                                      binder.bind(head.name, head.get("bias"), true));
      const NodeId loss = g.cross_entropy(logits, std::move(targets));
      const auto grads = g.backward(loss);
      std::vector<ParamUpdate<T>> ups;
      for (const auto& bnd : binder.trainable()) ups.push_back({bnd.key, &bnd.tensor->value, &grads.at(bnd.node)});
      if (step >= sch.total_steps) break;
      opt.step(ups, lr_at(sch, step++));
    }
  }

  const Tensor<T> z_test = encode(model, gather_rows(ds.features, split.test));
  Graph<T> g;
  const NodeId logits =
      g.add_row(g.matmul(g.constant(z_test), g.constant(head.get("weight").value)), g.constant(head.get("bias").value));
  EvalReport rep = score(g.value(logits), ds.labels, split, num_classes);
  rep.mode = "fine_tune";
  rep.note = "encoder fine-tuned on raw features without augmentation";
  return rep;
}

#define LWFS_INSTANTIATE(T)                                                                                    \
  template Tensor<T> extract_features(const ModelState<T>&, const Dataset<T>&);                                \
  template EvalReport linear_probe(const Tensor<T>&, std::span<const int>, const ProbeConfig&, const Split&);  \
  template EvalReport linear_probe(const Tensor<T>&, std::span<const int>, const ProbeConfig&);                \
  template EvalReport fine_tune(const ModelState<T>&, const Dataset<T>&, const ProbeConfig&, const Split&);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
