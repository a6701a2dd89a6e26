#include "lwfs/schedule.hpp"

#include <algorithm>
#include <numeric>

#include "lwfs/data.hpp"
#include "lwfs/errors.hpp"

namespace lwfs {

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kEndToEnd: return "end_to_end";
    case Strategy::kLayerWise: return "layer_wise";
    case Strategy::kLwFedSsl: return "lw_fedssl";
    case Strategy::kProgressive: return "progressive";
  }
  return "?";
}

Strategy strategy_from_string(const std::string& name) {
  for (auto s : {Strategy::kEndToEnd, Strategy::kLayerWise, Strategy::kLwFedSsl, Strategy::kProgressive}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown strategy '" + name + "' (expected end_to_end, layer_wise, lw_fedssl or progressive)");
}

std::string to_string(Allocation a) {
  switch (a) {
    case Allocation::kUniform: return "uniform";
    case Allocation::kRightSkewed: return "right_skewed";
    case Allocation::kLeftSkewed: return "left_skewed";
  }
  return "?";
}

Allocation allocation_from_string(const std::string& name) {
  for (auto a : {Allocation::kUniform, Allocation::kRightSkewed, Allocation::kLeftSkewed}) {
    if (to_string(a) == name) return a;
  }
  throw ConfigError("unknown allocation '" + name + "' (expected uniform, right_skewed or left_skewed)");
}

std::vector<std::size_t> allocate_rounds(std::size_t stages, std::size_t rounds, Allocation allocation) {
  if (stages == 0) throw ConfigError("schedule: at least one stage required");
  if (rounds < stages) {
    throw ConfigError("schedule: R < S (R=" + std::to_string(rounds) + ", S=" + std::to_string(stages) + ")");
  }
  if (allocation == Allocation::kUniform) {
    std::vector<std::size_t> out(stages, rounds / stages);
    for (std::size_t i = 0; i < rounds % stages; ++i) ++out[i];
    return out;
  }
  std::vector<double> weights(stages);
  for (std::size_t i = 0; i < stages; ++i) {
    weights[i] = static_cast<double>(allocation == Allocation::kRightSkewed ? stages - i : i + 1);
  }
  auto out = largest_remainder(weights, rounds);
  // Stages rounded down to zero borrow one round from the largest stage.
  for (auto& r : out) {
    if (r > 0) continue;
    auto donor = std::max_element(out.begin(), out.end());
    --*donor;
    r = 1;
  }
  return out;
}

StageSchedule make_schedule(Strategy strategy, std::size_t stages, std::size_t rounds, Allocation allocation) {
  StageSchedule s;
  s.strategy = strategy;
  s.num_layers = stages;
  if (strategy == Strategy::kEndToEnd) {
    if (stages == 0) throw ConfigError("schedule: at least one layer required");
    if (rounds == 0) throw ConfigError("schedule: at least one round required");
    s.rounds_per_stage = {rounds};
  } else {
    s.rounds_per_stage = allocate_rounds(stages, rounds, allocation);
  }
  return s;
}

std::size_t StageSchedule::total_rounds() const {
  return std::accumulate(rounds_per_stage.begin(), rounds_per_stage.end(), std::size_t{0});
}

std::size_t StageSchedule::stage_of(std::size_t round) const {
  if (round == 0 || round > total_rounds()) {
    throw ContractError("schedule: round " + std::to_string(round) + " outside [1, " +
                        std::to_string(total_rounds()) + "]");
  }
  std::size_t end = 0;
  for (std::size_t s = 0; s < rounds_per_stage.size(); ++s) {
    end += rounds_per_stage[s];
    if (round <= end) return s + 1;
  }
  return rounds_per_stage.size();
}

std::size_t StageSchedule::first_round(std::size_t stage) const {
  if (stage == 0 || stage > rounds_per_stage.size()) throw ContractError("schedule: stage out of range");
  return 1 + std::accumulate(rounds_per_stage.begin(), rounds_per_stage.begin() + static_cast<std::ptrdiff_t>(stage - 1),
                             std::size_t{0});
}

std::size_t StageSchedule::depth_at(std::size_t round) const {
  return strategy == Strategy::kEndToEnd ? num_layers : stage_of(round);
}

RoundPlan StageSchedule::plan(std::size_t round) const {
  RoundPlan p;
  p.round = round;
  p.stage = stage_of(round);
  p.stage_start = first_round(p.stage) == round;
  p.active_depth = depth_at(round);
  const std::size_t s = p.active_depth;
  switch (strategy) {
    case Strategy::kEndToEnd:
    case Strategy::kProgressive:
      p.frozen_prefix = 0;
      p.trainable = p.download = p.upload = {1, s};
      break;
    case Strategy::kLayerWise:
      p.frozen_prefix = s - 1;
      p.trainable = p.download = p.upload = {s, s};
      break;
    case Strategy::kLwFedSsl:
      p.frozen_prefix = s - 1;
      p.trainable = p.upload = {s, s};
      p.download = {1, s};
      break;
  }
  return p;
}

}  // namespace lwfs
