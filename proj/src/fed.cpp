#include "lwfs/fed.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include <nlohmann/json.hpp>

#include "lwfs/rng.hpp"

namespace lwfs {

std::string to_string(CalibrationOrder o) {
  return o == CalibrationOrder::kBeforeDispatch ? "before_dispatch" : "after_aggregation";
}

CalibrationOrder calibration_order_from_string(const std::string& name) {
  if (name == "before_dispatch") return CalibrationOrder::kBeforeDispatch;
  if (name == "after_aggregation") return CalibrationOrder::kAfterAggregation;
  throw ConfigError("unknown calibration order '" + name + "' (expected before_dispatch or after_aggregation)");
}

void FedConfig::validate(const ModelSpec& spec) const {
  if (num_clients < 1) throw ConfigError("fed: num_clients must be >= 1");
  if (rounds < 1) throw ConfigError("fed: rounds must be >= 1");
  if (!(client_fraction > 0 && client_fraction <= 1)) throw ConfigError("fed: client_fraction must be in (0, 1]");
  if (is_staged(strategy) && rounds < spec.num_layers) {
    throw ConfigError("fed: R < S (R=" + std::to_string(rounds) + ", S=" + std::to_string(spec.num_layers) + ")");
  }
}

void TrainingConfig::validate() const {
  model.validate();
  fed.validate(model);
  ssl.validate();
  augment.validate();
  if (!(base_lr > 0)) throw ConfigError("optim: base_lr must be > 0");
  if (adamw.weight_decay < 0) throw ConfigError("optim: weight_decay must be >= 0");
  if (workers < 1) throw ConfigError("workers must be >= 1");
}

LrSchedule make_lr_schedule(const TrainingConfig& cfg, const StageSchedule& schedule, std::size_t epochs_per_round) {
  LrSchedule s;
  s.kind = cfg.lr_kind;
  s.base_lr = cfg.base_lr;
  s.batch_size = cfg.ssl.batch_size;
  s.total_steps = schedule.total_rounds() * epochs_per_round;
  for (auto r : schedule.rounds_per_stage) s.stage_steps.push_back(r * epochs_per_round);
  return s;
}

namespace {

std::vector<double> round_lrs(const LrSchedule& sch, std::size_t round, std::size_t epochs) {
  std::vector<double> out;
  for (std::size_t e = 0; e < epochs; ++e) out.push_back(lr_at(sch, (round - 1) * epochs + e));
  return out;
}

std::string layer_name(std::size_t layer) { return "encoder." + std::to_string(layer); }

}  // namespace

template <typename T>
ParamGroup<T> aggregate(std::span<const ParamGroup<T>* const> groups, std::span<const double> weights) {
  if (groups.empty()) throw AggregationError("aggregate: no groups");
  if (groups.size() != weights.size()) throw AggregationError("aggregate: one weight per group required");
  double sum = 0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0) throw AggregationError("aggregate: weights must be finite and non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw AggregationError("aggregate: weights sum to " + std::to_string(sum));
  const ParamGroup<T>& ref = *groups[0];
  for (const auto* g : groups) {
    if (g->tensors.size() != ref.tensors.size() || g->name != ref.name) {
      throw AggregationError("aggregate: group layout differs for " + ref.name);
    }
    for (std::size_t i = 0; i < ref.tensors.size(); ++i) {
      if (g->tensors[i].name != ref.tensors[i].name || g->tensors[i].value.shape() != ref.tensors[i].value.shape()) {
        throw AggregationError("aggregate: shape mismatch at " + ref.name + "/" + ref.tensors[i].name + ": " +
                               shape_str(g->tensors[i].value.shape()) + " vs " +
                               shape_str(ref.tensors[i].value.shape()));
      }
    }
  }
  ParamGroup<T> out = ref;
  for (std::size_t i = 0; i < ref.tensors.size(); ++i) {
    auto dst = out.tensors[i].value.data();
    std::vector<double> acc(dst.size(), 0.0);
    for (std::size_t k = 0; k < groups.size(); ++k) {
      auto src = groups[k]->tensors[i].value.data();
      for (std::size_t j = 0; j < acc.size(); ++j) acc[j] += weights[k] * static_cast<double>(src[j]);
    }
    for (std::size_t j = 0; j < acc.size(); ++j) dst[j] = static_cast<T>(acc[j]);
  }
  return out;
}

template <typename T>
StageChange advance_stage(ModelState<T>& global, std::size_t stage, bool weight_transfer) {
  if (stage == 0 || stage > global.spec.num_layers) throw ContractError("advance_stage: stage out of range");
  if (global.active_depth() != stage - 1) {
    throw ContractError("advance_stage: model depth " + std::to_string(global.active_depth()) +
                        " does not precede stage " + std::to_string(stage));
  }
  StageChange change;
  ParamGroup<T> fresh = init_encoder_layer<T>(global.spec, stage, global.init_seed);
  if (weight_transfer && stage > 1) {
    const ParamGroup<T>& prev = global.encoder.back();
    bool same = prev.tensors.size() == fresh.tensors.size();
    for (std::size_t i = 0; same && i < fresh.tensors.size(); ++i) {
      same = prev.tensors[i].value.shape() == fresh.tensors[i].value.shape();
    }
    if (same) {
      fresh = prev;
      fresh.name = layer_name(stage);
      change.transferred = true;
    } else {
      change.warning = "weight transfer into " + layer_name(stage) + " skipped: shapes differ from " +
                       layer_name(stage - 1) + "; using fresh init";
    }
  }
  global.encoder.push_back(std::move(fresh));
  return change;
}

template <typename T>
EpochMetrics server_calibrate(ModelState<T>& global, ServerState<T>& server, const Dataset<T>& aux,
                              std::span<const double> lrs, const SslConfig& ssl, const AugmentPolicy& policy,
                              std::uint64_t seed) {
  EpochMetrics metrics;
  if (lrs.empty()) return metrics;
  if (aux.size() == 0) throw ConfigError("server calibration: auxiliary dataset is empty");
  global.frozen_prefix = 0;
  if (!server.target) {
    server.target = MomentumBranch<T>::from(global);
  } else {
    server.target->sync_depth(global);
  }
  for (std::size_t e = 0; e < lrs.size(); ++e) {
    metrics.append(local_ssl_epoch(global, *server.target, server.optimizer, static_cast<ModelState<T>*>(nullptr), aux,
                                   ssl, policy, lrs[e], mix_seed(seed, {e}), "server"));
  }
  return metrics;
}

template <typename T>
ClientResult<T> local_round(const ModelState<T>& global, const RoundPlan& plan, std::size_t client_id,
                            const Dataset<T>& data, const TrainingConfig& cfg, std::span<const double> lrs,
                            bool keep_local) {
  ModelState<T> local = global;
  local.frozen_prefix = plan.frozen_prefix;
  MomentumBranch<T> target = MomentumBranch<T>::from(local);
  AdamW<T> optimizer(cfg.adamw);
  std::optional<ModelState<T>> snapshot;
  if (cfg.alignment_active()) {
    snapshot = global;
    snapshot->frozen_prefix = plan.frozen_prefix;
  }
  const std::uint64_t seed = mix_seed(cfg.seed, {seed_tag::kClient, plan.round, client_id});
  const std::string actor = "client " + std::to_string(client_id);

  ClientResult<T> out;
  out.id = client_id;
  for (std::size_t e = 0; e < lrs.size(); ++e) {
    out.metrics.append(local_ssl_epoch(local, target, optimizer, snapshot ? &*snapshot : nullptr, data, cfg.ssl,
                                       cfg.augment, lrs[e], mix_seed(seed, {e}), actor));
  }
  for (std::size_t l = plan.upload.first; l <= plan.upload.last; ++l) out.upload.push_back(local.encoder[l - 1]);
  out.upload.push_back(local.proj);
  out.upload.push_back(local.pred);
  if (keep_local) out.local = std::move(local);
  return out;
}

std::vector<std::size_t> sample_participants(const FedConfig& fed, std::uint64_t seed, std::size_t round) {
  std::vector<std::size_t> ids(fed.num_clients);
  std::iota(ids.begin(), ids.end(), 0);
  if (fed.client_fraction >= 1.0) return ids;
  const auto m = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::llround(fed.client_fraction * static_cast<double>(fed.num_clients))));
  Rng rng(mix_seed(seed, {seed_tag::kSampling, round}));
  std::shuffle(ids.begin(), ids.end(), rng);
  ids.resize(m);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::string RoundRecord::to_json(bool include_wall_clock) const {
  nlohmann::ordered_json j;
  j["round"] = round;
  j["stage"] = stage;
  j["active_depth"] = active_depth;
  j["frozen_prefix"] = frozen_prefix;
  j["participants"] = participants;
  j["mean_loss"] = mean_loss;
  j["calibration_loss"] = calibration_loss ? nlohmann::ordered_json(*calibration_loss) : nlohmann::ordered_json();
  auto& cs = j["clients"] = nlohmann::ordered_json::array();
  for (const auto& c : clients) {
    nlohmann::ordered_json o;
    o["id"] = c.id;
    o["samples"] = c.samples;
    o["batches"] = c.batches;
    o["mean_loss"] = c.mean_loss;
    o["mean_align"] = c.mean_align ? nlohmann::ordered_json(*c.mean_align) : nlohmann::ordered_json();
    o["global_evaluations"] = c.global_evaluations;
    cs.push_back(std::move(o));
  }
  auto& rs = j["resources"] = nlohmann::ordered_json::array();
  for (const auto& e : resources) {
    nlohmann::ordered_json o;
    o["actor"] = e.actor == kServerActor ? nlohmann::ordered_json("server") : nlohmann::ordered_json(e.actor);
    o["flops_fwd"] = e.flops_fwd;
    o["flops_bwd"] = e.flops_bwd;
    o["bytes_down"] = e.bytes_down;
    o["bytes_up"] = e.bytes_up;
    o["mem_model"] = e.mem_model;
    rs.push_back(std::move(o));
  }
  j["warnings"] = warnings;
  if (include_wall_clock) j["wall_seconds"] = wall_seconds;
  return j.dump();
}

template <typename T>
FederationResult<T> run_federation(const TrainingConfig& cfg, const FederationData<T>& data,
                                   const RoundObserver<T>& observer) {
  cfg.validate();
  const FedConfig& fed = cfg.fed;
  if (data.clients.size() != fed.num_clients) {
    throw ConfigError("fed: " + std::to_string(data.clients.size()) + " client datasets for " +
                      std::to_string(fed.num_clients) + " clients");
  }
  for (std::size_t i = 0; i < data.clients.size(); ++i) {
    if (data.clients[i].dim() != cfg.model.input_dim) {
      throw ConfigError("fed: client " + std::to_string(i) + " feature dim " + std::to_string(data.clients[i].dim()) +
                        " != input_dim " + std::to_string(cfg.model.input_dim));
    }
  }
  if (cfg.calibration_active() && (!data.auxiliary || data.auxiliary->size() == 0)) {
    throw ConfigError("fed: lw_fedssl with calibration_epochs > 0 needs a non-empty auxiliary dataset");
  }

  const StageSchedule schedule = make_schedule(fed.strategy, cfg.model.num_layers, fed.rounds, fed.allocation);
  const LrSchedule client_lr = make_lr_schedule(cfg, schedule, cfg.ssl.local_epochs);
  const LrSchedule server_lr = make_lr_schedule(cfg, schedule, std::max<std::size_t>(fed.calibration_epochs, 1));

  FederationResult<T> result{build_model<T>(cfg.model, cfg.seed, is_staged(fed.strategy) ? 0 : cfg.model.num_layers),
                             {}};
  ModelState<T>& global = result.model;
  ServerState<T> server{AdamW<T>(cfg.adamw), std::nullopt};

  for (std::size_t r = 1; r <= fed.rounds; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    const RoundPlan plan = schedule.plan(r);
    RoundRecord rec;
    rec.round = r;
    rec.stage = plan.stage;
    rec.active_depth = plan.active_depth;
    rec.frozen_prefix = plan.frozen_prefix;

    if (is_staged(fed.strategy) && plan.stage_start) {
      const StageChange change = advance_stage(global, plan.stage, fed.weight_transfer);
      if (change.warning) rec.warnings.push_back(*change.warning);
    }

    auto calibrate = [&] {
      try {
        const auto lrs = round_lrs(server_lr, r, fed.calibration_epochs);
        const EpochMetrics m = server_calibrate(global, server, *data.auxiliary, lrs, cfg.ssl, cfg.augment,
                                                mix_seed(cfg.seed, {seed_tag::kServer, r}));
        rec.calibration_loss = m.mean_loss();
      } catch (const NumericError& e) {
        throw RoundAborted(r, e.what());
      }
    };
    if (cfg.calibration_active() && fed.calibration_order == CalibrationOrder::kBeforeDispatch) calibrate();
    global.frozen_prefix = plan.frozen_prefix;

    rec.participants = sample_participants(fed, cfg.seed, r);
    const auto lrs = round_lrs(client_lr, r, cfg.ssl.local_epochs);
    const std::size_t m = rec.participants.size();
    std::vector<std::optional<ClientResult<T>>> slots(m);
    std::vector<std::exception_ptr> errors(m);
    auto work = [&](std::size_t slot) {
      try {
        const std::size_t id = rec.participants[slot];
        slots[slot] = local_round(global, plan, id, data.clients[id], cfg, lrs);
      } catch (...) {
        errors[slot] = std::current_exception();
      }
    };
    const std::size_t workers = std::min(cfg.workers, m);
    if (workers <= 1) {
      for (std::size_t i = 0; i < m; ++i) work(i);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::jthread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t i = next++; i < m; i = next++) work(i);
        });
      }
    }
    for (std::size_t i = 0; i < m; ++i) {
      if (!errors[i]) continue;
      try {
        std::rethrow_exception(errors[i]);
      } catch (const NumericError& e) {
        throw RoundAborted(r, e.what());
      }
    }

    std::vector<double> weights(m);
    double total = 0;
    for (std::size_t i = 0; i < m; ++i) total += static_cast<double>(data.clients[rec.participants[i]].size());
    for (std::size_t i = 0; i < m; ++i) {
      weights[i] = static_cast<double>(data.clients[rec.participants[i]].size()) / total;
    }
    const std::size_t n_groups = slots[0]->upload.size();
    for (std::size_t g = 0; g < n_groups; ++g) {
      std::vector<const ParamGroup<T>*> groups;
      for (const auto& s : slots) groups.push_back(&s->upload[g]);
      ParamGroup<T> merged = aggregate<T>(groups, weights);
      if (merged.name == "proj") {
        global.proj = std::move(merged);
      } else if (merged.name == "pred") {
        global.pred = std::move(merged);
      } else {
        const std::size_t layer = plan.upload.first + g;
        global.encoder.at(layer - 1) = std::move(merged);
      }
    }

    if (cfg.calibration_active() && fed.calibration_order == CalibrationOrder::kAfterAggregation) {
      calibrate();
      global.frozen_prefix = plan.frozen_prefix;
    }

    double loss_sum = 0;
    std::vector<ClientLoad> loads;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& res = *slots[i];
      ClientRoundStats st;
      st.id = res.id;
      st.samples = res.metrics.samples;
      st.batches = res.metrics.batches;
      st.mean_loss = res.metrics.mean_loss();
      if (!res.metrics.align_losses.empty()) {
        st.mean_align = std::accumulate(res.metrics.align_losses.begin(), res.metrics.align_losses.end(), 0.0) /
                        static_cast<double>(res.metrics.align_losses.size());
      }
      st.global_evaluations = res.metrics.global_evaluations;
      loss_sum += st.mean_loss;
      rec.clients.push_back(st);
      loads.push_back({res.id, data.clients[res.id].size()});
    }
    rec.mean_loss = loss_sum / static_cast<double>(m);
    std::optional<ServerLoad> server_load;
    if (cfg.calibration_active()) server_load = ServerLoad{data.auxiliary->size(), fed.calibration_epochs};
    rec.resources = ledger_round(cfg.model, schedule, r, loads, cfg.ssl.local_epochs, cfg.ssl.batch_size,
                                 cfg.alignment_active(), server_load);
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (observer) observer(rec, global);
    result.records.push_back(std::move(rec));
  }
  return result;
}

#define LWFS_INSTANTIATE(T)                                                                                      \
  template ParamGroup<T> aggregate(std::span<const ParamGroup<T>* const>, std::span<const double>);              \
  template StageChange advance_stage(ModelState<T>&, std::size_t, bool);                                         \
  template EpochMetrics server_calibrate(ModelState<T>&, ServerState<T>&, const Dataset<T>&,                     \
                                         std::span<const double>, const SslConfig&, const AugmentPolicy&,        \
                                         std::uint64_t);                                                         \
  template ClientResult<T> local_round(const ModelState<T>&, const RoundPlan&, std::size_t, const Dataset<T>&,   \
                                       const TrainingConfig&, std::span<const double>, bool);                    \
  template FederationResult<T> run_federation(const TrainingConfig&, const FederationData<T>&,                   \
                                              const RoundObserver<T>&);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
