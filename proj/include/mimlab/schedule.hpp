#pragma once

#include <cstdint>
#include <vector>

namespace mimlab {

enum class ScheduleKind { cosine, step };

/// Learning-rate schedule: linear warmup from 0, then cosine decay to 0 or
/// piecewise-constant decay at fractional milestones of total_steps.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::cosine;
  double base_lr = 1e-3;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;
  std::vector<double> step_milestones{0.90, 0.95};
  double step_factor = 0.1;

  void validate() const;
};

/// Learning rate at step t, 0 <= t <= total_steps.
double lr_at(const ScheduleSpec& schedule, std::int64_t t);

}  // namespace mimlab
