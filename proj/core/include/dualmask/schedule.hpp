#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dualmask {

enum class ScheduleKind { cosine, linear, power };

ScheduleKind parse_schedule_kind(std::string_view name);
std::string_view to_string(ScheduleKind kind);

/// Maps training progress r in [0,1] to a mask ratio t. t(0) = 1 and the
/// ratio never drops below `floor`.
struct MaskSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  double power_exponent = 2.0;
  double floor = 1e-3;

  /// Raw schedule curve without the floor (exactly 0 at r = 1).
  double curve(double r) const;
};

/// Mask ratio for progress r. Throws ContractError when r is outside [0,1].
double mask_ratio(double r, const MaskSchedule& sched);

/// N+1 ratios from 1 down to exactly 0 for an N-step reverse process;
/// element k is the schedule curve at k/N. The floor is not applied here:
/// a floored tail would repeat values and the last entry is forced to 0.
std::vector<double> remask_trajectory(int num_steps, const MaskSchedule& sched);

/// One-dimensional Sobol sequence (direction numbers v_k = 2^(32-k), i.e.
/// the Gray-code ordered base-2 van der Corput sequence). The leading zero
/// point is skipped, so draws start 0.5, 0.75, 0.25, 0.375.
class SobolState {
 public:
  SobolState() = default;
  /// State after `draws_taken` draws, so workers can take strided slices.
  explicit SobolState(std::uint32_t draws_taken);

  double next();
  std::uint32_t index() const { return index_; }

 private:
  std::uint32_t index_ = 0;  // number of draws taken
  std::uint32_t state_ = 0;  // Gray-code accumulator
};

struct LrSchedule {
  double base_lr = 1e-5;
  std::int64_t warmup_steps = 10000;
  std::int64_t total_steps = 150000;
};

/// Linear warmup from 0 to base_lr, then half-cosine decay to 0 at total_steps.
double lr_at(std::int64_t step, const LrSchedule& sched);

}  // namespace dualmask
