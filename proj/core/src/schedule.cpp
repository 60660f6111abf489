#include "dualmask/schedule.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>

#include "dualmask/tensor.hpp"

namespace dualmask {

ScheduleKind parse_schedule_kind(std::string_view name) {
  if (name == "cosine") return ScheduleKind::cosine;
  if (name == "linear") return ScheduleKind::linear;
  if (name == "power") return ScheduleKind::power;
  throw ContractError("unknown schedule kind '" + std::string(name) + "'");
}

std::string_view to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::power: return "power";
  }
  return "unknown";
}

double MaskSchedule::curve(double r) const {
  switch (kind) {
    case ScheduleKind::cosine: return r >= 1.0 ? 0.0 : std::cos(std::numbers::pi * r / 2.0);
    case ScheduleKind::linear: return 1.0 - r;
    case ScheduleKind::power: return std::pow(1.0 - r, power_exponent);
  }
  return 0.0;
}

double mask_ratio(double r, const MaskSchedule& sched) {
  if (!(r >= 0.0 && r <= 1.0)) throw ContractError("mask_ratio: progress " + std::to_string(r) + " outside [0,1]");
  if (sched.kind == ScheduleKind::power && !(sched.power_exponent > 0.0)) {
    throw ContractError("mask_ratio: power exponent must be positive");
  }
  return std::max(sched.floor, sched.curve(r));
}

std::vector<double> remask_trajectory(int num_steps, const MaskSchedule& sched) {
  if (num_steps < 1) throw ContractError("remask_trajectory: need at least one step");
  std::vector<double> ratios(static_cast<std::size_t>(num_steps) + 1);
  ratios.front() = 1.0;
  for (int k = 1; k < num_steps; ++k) {
    ratios[static_cast<std::size_t>(k)] = sched.curve(static_cast<double>(k) / num_steps);
  }
  ratios.back() = 0.0;
  return ratios;
}

SobolState::SobolState(std::uint32_t draws_taken) : index_(draws_taken) {
  // Element n of the Gray-code sequence is the bit-reversal of gray(n).
  const std::uint32_t gray = index_ ^ (index_ >> 1);
  std::uint32_t rev = 0;
  for (int b = 0; b < 32; ++b) rev |= ((gray >> b) & 1u) << (31 - b);
  state_ = rev;
}

double SobolState::next() {
  if (index_ == UINT32_MAX) {
    spdlog::warn("SobolState: index overflow, wrapping to the start of the sequence");
    index_ = 0;
    state_ = 0;
  }
  // Flip the direction number selected by the lowest zero bit of the counter.
  const int c = std::countr_one(index_);
  state_ ^= 1u << (31 - c);
  ++index_;
  return static_cast<double>(state_) * 0x1p-32;
}

double lr_at(std::int64_t step, const LrSchedule& sched) {
  if (step < 0) throw ContractError("lr_at: negative step");
  if (sched.warmup_steps > 0 && step < sched.warmup_steps) {
    return sched.base_lr * static_cast<double>(step) / static_cast<double>(sched.warmup_steps);
  }
  if (sched.total_steps <= sched.warmup_steps) return step == sched.warmup_steps ? sched.base_lr : 0.0;
  if (step >= sched.total_steps) return 0.0;
  const double span = static_cast<double>(sched.total_steps - sched.warmup_steps);
  const double progress = static_cast<double>(step - sched.warmup_steps) / span;
  return sched.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace dualmask
