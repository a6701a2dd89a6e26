#include "lwfs/resource.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <sstream>

#include "lwfs/errors.hpp"
#include "lwfs/ssl.hpp"

namespace lwfs {

namespace {

std::uint64_t linear_flops(std::uint64_t in, std::uint64_t out, bool bias) { return 2 * in * out + (bias ? out : 0); }

std::uint64_t head_flops(const std::vector<std::size_t>& dims) {
  std::uint64_t f = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::uint64_t out = dims[i + 1];
    f += linear_flops(dims[i], out, false) + kNormFlopsPerElement * out;
    if (i + 2 < dims.size()) f += kReluFlopsPerElement * out;
  }
  return f;
}

// Values kept for backward: linear output, norm output, activation output.
std::uint64_t head_activations(const std::vector<std::size_t>& dims) {
  std::uint64_t a = 0;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) a += (i + 2 < dims.size() ? 3 : 2) * dims[i + 1];
  return a;
}

std::vector<std::size_t> proj_dims(const ModelSpec& s) { return {s.block_out_dim, s.proj_hidden, s.proj_hidden, s.proj_out}; }
std::vector<std::size_t> pred_dims(const ModelSpec& s) { return {s.proj_out, s.pred_hidden, s.proj_out}; }

// Norm output, fc1 output, GELU output, block output.
std::uint64_t block_activations(const ModelSpec& spec, std::size_t layer) {
  return spec.block_in_dim(layer) + 2 * spec.block_hidden_dim + spec.block_out_dim;
}

std::uint64_t encoder_flops(const ModelSpec& spec, std::size_t first, std::size_t last) {
  std::uint64_t f = 0;
  for (std::size_t l = first; l <= last; ++l) f += block_forward_flops(spec, l);
  return f;
}

std::uint64_t encoder_scalars(const ModelSpec& spec, const LayerRange& range) {
  std::uint64_t n = 0;
  for (std::size_t l = range.first; l <= range.last; ++l) n += block_scalar_count(spec, l);
  return n;
}

}  // namespace

std::uint64_t block_forward_flops(const ModelSpec& spec, std::size_t layer) {
  const std::uint64_t in = spec.block_in_dim(layer), h = spec.block_hidden_dim, out = spec.block_out_dim;
  std::uint64_t f = kNormFlopsPerElement * in + linear_flops(in, h, true) + kGeluFlopsPerElement * h +
                    linear_flops(h, out, true);
  if (in == out) f += out;  // residual
  return f;
}

std::uint64_t proj_forward_flops(const ModelSpec& spec) { return head_flops(proj_dims(spec)); }
std::uint64_t pred_forward_flops(const ModelSpec& spec) { return head_flops(pred_dims(spec)); }

FlopCount flops_per_sample(const ModelSpec& spec, const RoundPlan& plan, bool alpha_active) {
  const std::size_t s = plan.active_depth;
  const std::uint64_t heads = proj_forward_flops(spec) + pred_forward_flops(spec);
  const std::uint64_t online = encoder_flops(spec, 1, s) + heads;
  const std::uint64_t target = encoder_flops(spec, 1, s) + proj_forward_flops(spec);
  const std::uint64_t global = alpha_active ? encoder_flops(spec, 1, s) : 0;
  const std::uint64_t trainable =
      (plan.trainable.empty() ? 0 : encoder_flops(spec, plan.trainable.first, plan.trainable.last)) + heads;
  constexpr std::uint64_t kViews = 2;
  return {kViews * (online + target + global), kViews * kBackwardMultiplier * trainable};
}

FlopCount flops_local_round(const ModelSpec& spec, const RoundPlan& plan, std::uint64_t samples_per_epoch,
                            std::size_t epochs, bool alpha_active) {
  const FlopCount one = flops_per_sample(spec, plan, alpha_active);
  const std::uint64_t n = samples_per_epoch * epochs;
  return {one.forward * n, one.backward * n};
}

std::uint64_t exchange_scalars(const ModelSpec& spec, const LayerRange& range, bool encoder_only) {
  std::uint64_t n = encoder_scalars(spec, range);
  if (!encoder_only) n += proj_scalar_count(spec) + pred_scalar_count(spec);
  return n;
}

CommCount comm_round(const ModelSpec& spec, const StageSchedule& schedule, std::size_t round) {
  const RoundPlan p = schedule.plan(round);
  CommCount c;
  c.encoder_down = kWireBytesPerScalar * exchange_scalars(spec, p.download, true);
  c.encoder_up = kWireBytesPerScalar * exchange_scalars(spec, p.upload, true);
  c.bytes_down = kWireBytesPerScalar * exchange_scalars(spec, p.download, false) + kMessageHeaderBytes;
  c.bytes_up = kWireBytesPerScalar * exchange_scalars(spec, p.upload, false) + kMessageHeaderBytes;
  return c;
}

MemoryBreakdown memory_model(const ModelSpec& spec, const RoundPlan& plan, std::size_t batch, bool alpha_active) {
  const std::size_t s = plan.active_depth;
  const LayerRange all{1, s};
  MemoryBreakdown m;
  m.params = encoder_scalars(spec, all) + proj_scalar_count(spec) + pred_scalar_count(spec);
  for (std::size_t l = plan.trainable.first; l <= plan.trainable.last; ++l) m.grads += block_trainable_count(spec, l);
  m.grads += proj_trainable_count(spec) + pred_trainable_count(spec);
  m.adam_moments = 2 * m.grads;
  m.momentum_params = encoder_scalars(spec, all) + proj_scalar_count(spec);
  if (alpha_active) m.global_params = encoder_scalars(spec, all);

  constexpr std::uint64_t kViews = 2;
  std::uint64_t per_view = head_activations(proj_dims(spec)) + head_activations(pred_dims(spec));
  for (std::size_t l = plan.trainable.first; l <= plan.trainable.last; ++l) per_view += block_activations(spec, l);
  m.trainable_activations = kViews * batch * per_view;
  std::uint64_t boundary = plan.frozen_prefix > 0 ? spec.block_out_dim : 0;
  if (alpha_active) boundary += spec.block_out_dim;
  m.boundary_activations = kViews * batch * boundary;
  return m;
}

std::uint64_t samples_per_epoch(std::size_t n, std::size_t batch_size) {
  const std::size_t b = effective_batch(n, batch_size);
  if (b < 2) return 0;
  return (n / b) * b;
}

std::vector<ResourceEntry> ledger_round(const ModelSpec& spec, const StageSchedule& schedule, std::size_t round,
                                        std::span<const ClientLoad> clients, std::size_t local_epochs,
                                        std::size_t batch_size, bool alpha_active,
                                        const std::optional<ServerLoad>& server) {
  const RoundPlan plan = schedule.plan(round);
  const CommCount comm = comm_round(spec, schedule, round);
  std::vector<ResourceEntry> out;
  std::vector<ClientLoad> sorted(clients.begin(), clients.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (const auto& c : sorted) {
    const FlopCount f = flops_local_round(spec, plan, samples_per_epoch(c.samples, batch_size), local_epochs, alpha_active);
    out.push_back({round, static_cast<std::int64_t>(c.id), plan.stage, f.forward, f.backward, comm.bytes_down,
                   comm.bytes_up,
                   memory_model(spec, plan, effective_batch(c.samples, batch_size), alpha_active).bytes()});
  }
  if (server && server->epochs > 0 && server->samples > 0) {
    RoundPlan sp = plan;
    sp.frozen_prefix = 0;
    sp.trainable = {1, plan.active_depth};
    const FlopCount f = flops_local_round(spec, sp, samples_per_epoch(server->samples, batch_size), server->epochs, false);
    out.push_back({round, kServerActor, plan.stage, f.forward, f.backward, 0, 0,
                   memory_model(spec, sp, effective_batch(server->samples, batch_size), false).bytes()});
  }
  return out;
}

LedgerTotals ledger_totals(std::span<const ResourceEntry> entries, std::optional<std::int64_t> actor) {
  LedgerTotals t;
  for (const auto& e : entries) {
    if (actor ? e.actor != *actor : e.actor == kServerActor) continue;
    t.flops_fwd += e.flops_fwd;
    t.flops_bwd += e.flops_bwd;
    t.bytes_down += e.bytes_down;
    t.bytes_up += e.bytes_up;
    t.peak_mem_model = std::max(t.peak_mem_model, e.mem_model);
  }
  return t;
}

void write_ledger_csv(std::ostream& out, std::span<const ResourceEntry> entries) {
  out << "round,actor,stage,flops_fwd,flops_bwd,bytes_down,bytes_up,mem_model\n";
  for (const auto& e : entries) {
    out << e.round << ',';
    if (e.actor == kServerActor) {
      out << "server";
    } else {
      out << e.actor;
    }
    out << ',' << e.stage << ',' << e.flops_fwd << ',' << e.flops_bwd << ',' << e.bytes_down << ',' << e.bytes_up
        << ',' << e.mem_model << '\n';
  }
}

std::vector<ResourceEntry> read_ledger_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "round,actor,stage,flops_fwd,flops_bwd,bytes_down,bytes_up,mem_model") {
    throw FormatError("ledger csv: missing or unexpected header");
  }
  std::vector<ResourceEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 8) throw FormatError("ledger csv: line " + std::to_string(lineno) + " has wrong column count");
    try {
      ResourceEntry e;
      e.round = std::stoull(cells[0]);
      e.actor = cells[1] == "server" ? kServerActor : std::stoll(cells[1]);
      e.stage = std::stoull(cells[2]);
      e.flops_fwd = std::stoull(cells[3]);
      e.flops_bwd = std::stoull(cells[4]);
      e.bytes_down = std::stoull(cells[5]);
      e.bytes_up = std::stoull(cells[6]);
      e.mem_model = std::stoull(cells[7]);
      out.push_back(e);
    } catch (const std::logic_error&) {
      throw FormatError("ledger csv: line " + std::to_string(lineno) + " is not numeric");
    }
  }
  return out;
}

}  // namespace lwfs
