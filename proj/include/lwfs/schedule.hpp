#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lwfs {

enum class Strategy { kEndToEnd, kLayerWise, kLwFedSsl, kProgressive };
enum class Allocation { kUniform, kRightSkewed, kLeftSkewed };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);
std::string to_string(Allocation a);
Allocation allocation_from_string(const std::string& name);

/// Whether the strategy grows the encoder one layer per stage.
inline bool is_staged(Strategy s) { return s != Strategy::kEndToEnd; }
/// Whether clients train only the newest layer.
inline bool is_layer_wise(Strategy s) { return s == Strategy::kLayerWise || s == Strategy::kLwFedSsl; }

/// Encoder layers first..last (1-based, inclusive; empty when first > last)
/// plus both heads. Every exchange and trainable set includes H and P.
struct LayerRange {
  std::size_t first = 1;
  std::size_t last = 0;

  bool empty() const { return first > last; }
  std::size_t count() const { return empty() ? 0 : last - first + 1; }
  bool contains(std::size_t layer) const { return layer >= first && layer <= last; }
  bool operator==(const LayerRange&) const = default;
};

struct RoundPlan {
  std::size_t round = 1;  // 1-based
  std::size_t stage = 1;  // 1-based
  bool stage_start = false;
  std::size_t active_depth = 0;
  std::size_t frozen_prefix = 0;  // during client training
  LayerRange trainable;
  LayerRange download;
  LayerRange upload;
};

struct StageSchedule {
  Strategy strategy = Strategy::kLayerWise;
  std::size_t num_layers = 1;
  std::vector<std::size_t> rounds_per_stage;

  std::size_t total_rounds() const;
  std::size_t num_stages() const { return rounds_per_stage.size(); }
  std::size_t stage_of(std::size_t round) const;
  std::size_t first_round(std::size_t stage) const;
  /// Encoder depth the global model has during `round`.
  std::size_t depth_at(std::size_t round) const;
  RoundPlan plan(std::size_t round) const;
};

/// Splits R rounds over S stages. End-to-end training has a single stage of
/// R rounds with all S layers present.
std::vector<std::size_t> allocate_rounds(std::size_t stages, std::size_t rounds, Allocation allocation);
StageSchedule make_schedule(Strategy strategy, std::size_t stages, std::size_t rounds, Allocation allocation);

}  // namespace lwfs
