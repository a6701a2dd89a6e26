#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "lwfs/model.hpp"
#include "lwfs/schedule.hpp"

namespace lwfs {

/// Per-element forward costs of the non-matmul terms.
inline constexpr std::uint64_t kNormFlopsPerElement = 4;
inline constexpr std::uint64_t kGeluFlopsPerElement = 8;
inline constexpr std::uint64_t kReluFlopsPerElement = 1;
inline constexpr std::uint64_t kBackwardMultiplier = 2;
inline constexpr std::uint64_t kWireBytesPerScalar = 4;
/// Fixed framing overhead per message (one download, one upload per round).
inline constexpr std::uint64_t kMessageHeaderBytes = 16;

/// Forward FLOPs of one sample through each unit.
std::uint64_t block_forward_flops(const ModelSpec& spec, std::size_t layer);
std::uint64_t proj_forward_flops(const ModelSpec& spec);
std::uint64_t pred_forward_flops(const ModelSpec& spec);

struct FlopCount {
  std::uint64_t forward = 0;
  std::uint64_t backward = 0;

  std::uint64_t total() const { return forward + backward; }
  FlopCount& operator+=(const FlopCount& o) {
    forward += o.forward;
    backward += o.backward;
    return *this;
  }
  bool operator==(const FlopCount&) const = default;
};

/// One training sample (two views): online forward through L_1..L_s, H, P;
/// backward over the trainable layers and both heads; momentum branch
/// forward through F_k and H_k; global-encoder forward when alignment is
/// active.
FlopCount flops_per_sample(const ModelSpec& spec, const RoundPlan& plan, bool alpha_active);

/// flops_per_sample scaled by samples processed over `epochs` epochs.
FlopCount flops_local_round(const ModelSpec& spec, const RoundPlan& plan, std::uint64_t samples_per_epoch,
                            std::size_t epochs, bool alpha_active);

struct CommCount {
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t encoder_down = 0;  // encoder layers only, no heads or framing
  std::uint64_t encoder_up = 0;
};

/// Scalars of the exchange set: encoder layers in `range` plus H and P.
std::uint64_t exchange_scalars(const ModelSpec& spec, const LayerRange& range, bool encoder_only);
CommCount comm_round(const ModelSpec& spec, const StageSchedule& schedule, std::size_t round);

/// Element counts of the analytic memory model; bytes = 4 * total.
struct MemoryBreakdown {
  std::uint64_t params = 0;
  std::uint64_t grads = 0;
  std::uint64_t adam_moments = 0;
  std::uint64_t momentum_params = 0;
  std::uint64_t global_params = 0;
  std::uint64_t trainable_activations = 0;
  std::uint64_t boundary_activations = 0;

  std::uint64_t elements() const {
    return params + grads + adam_moments + momentum_params + global_params + trainable_activations +
           boundary_activations;
  }
  std::uint64_t bytes() const { return kWireBytesPerScalar * elements(); }
};

MemoryBreakdown memory_model(const ModelSpec& spec, const RoundPlan& plan, std::size_t batch, bool alpha_active);

inline constexpr std::int64_t kServerActor = -1;

struct ResourceEntry {
  std::size_t round = 0;
  std::int64_t actor = kServerActor;  // client id, or kServerActor
  std::size_t stage = 0;
  std::uint64_t flops_fwd = 0;
  std::uint64_t flops_bwd = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t mem_model = 0;

  bool operator==(const ResourceEntry&) const = default;
};

struct ClientLoad {
  std::size_t id = 0;
  std::size_t samples = 0;  // local dataset size
};

/// Work the server does in a round (calibration on the auxiliary set).
struct ServerLoad {
  std::size_t samples = 0;
  std::size_t epochs = 0;
};

/// Resource entries of one round: the participating clients in id order,
/// then the server when it trains. Pure in its arguments.
std::vector<ResourceEntry> ledger_round(const ModelSpec& spec, const StageSchedule& schedule, std::size_t round,
                                        std::span<const ClientLoad> clients, std::size_t local_epochs,
                                        std::size_t batch_size, bool alpha_active,
                                        const std::optional<ServerLoad>& server);

/// Samples actually consumed per epoch (short tail dropped).
std::uint64_t samples_per_epoch(std::size_t n, std::size_t batch_size);

struct LedgerTotals {
  std::uint64_t flops_fwd = 0;
  std::uint64_t flops_bwd = 0;
  std::uint64_t bytes_down = 0;
  std::uint64_t bytes_up = 0;
  std::uint64_t peak_mem_model = 0;
};

/// Totals over entries for one actor (or all clients when actor is empty).
LedgerTotals ledger_totals(std::span<const ResourceEntry> entries, std::optional<std::int64_t> actor = std::nullopt);

void write_ledger_csv(std::ostream& out, std::span<const ResourceEntry> entries);
std::vector<ResourceEntry> read_ledger_csv(std::istream& in);

}  // namespace lwfs
