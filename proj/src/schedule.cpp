#include "mimlab/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "mimlab/error.hpp"

namespace mimlab {

void ScheduleSpec::validate() const {
  if (!(base_lr >= 0.0)) throw ConfigError("schedule: base_lr must be >= 0");
  if (warmup_steps < 0) throw ConfigError("schedule: warmup_steps must be >= 0");
  if (total_steps <= warmup_steps) throw ConfigError("schedule: total_steps must exceed warmup_steps");
  for (double m : step_milestones)
    if (!(m > 0.0 && m <= 1.0)) throw ConfigError("schedule: milestones must lie in (0, 1]");
  if (!(step_factor > 0.0 && step_factor <= 1.0)) throw ConfigError("schedule: step_factor must lie in (0, 1]");
}

double lr_at(const ScheduleSpec& s, std::int64_t t) {
  if (t < 0 || t > s.total_steps)
    throw ConfigError("lr_at: step " + std::to_string(t) + " outside [0, " + std::to_string(s.total_steps) + "]");
  if (t < s.warmup_steps) return s.base_lr * static_cast<double>(t) / static_cast<double>(s.warmup_steps);

  switch (s.kind) {
    case ScheduleKind::cosine: {
      const double u =
          static_cast<double>(t - s.warmup_steps) / static_cast<double>(s.total_steps - s.warmup_steps);
      return s.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
    }
    case ScheduleKind::step: {
      double lr = s.base_lr;
      for (double m : s.step_milestones) {
        const auto at = static_cast<std::int64_t>(std::llround(m * static_cast<double>(s.total_steps)));
        if (t >= at) lr *= s.step_factor;
      }
      return lr;
    }
  }
  return s.base_lr;
}

}  // namespace mimlab
