#include "clalign/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace clalign {

void ScheduleSpec::validate() const {
  if (total_steps < 0) throw std::invalid_argument("schedule: total_steps must be >= 0");
  if (kind == ScheduleKind::kCustom) {
    if (static_cast<int>(custom.size()) != total_steps) {
      throw std::invalid_argument("schedule: custom list length must equal total_steps");
    }
    for (double v : custom) {
      if (!(v > 0.0) || !std::isfinite(v)) {
        throw std::invalid_argument("schedule: custom step sizes must be positive");
      }
    }
    return;
  }
  if (!(base_eta > 0.0) || !std::isfinite(base_eta)) {
    throw std::invalid_argument("schedule: base eta must be positive");
  }
  if (warmup_steps < 0) throw std::invalid_argument("schedule: warmup must be >= 0");
  if (kind == ScheduleKind::kCosineWarmup && total_steps > 0 && warmup_steps >= total_steps) {
    throw std::invalid_argument("schedule: warmup must be shorter than the horizon");
  }
}

double ScheduleSpec::eta(int t) const {
  switch (kind) {
    case ScheduleKind::kConstant:
      return base_eta;
    case ScheduleKind::kInverseT:
      return base_eta / (t + 1.0);
    case ScheduleKind::kCustom:
      return custom.at(static_cast<std::size_t>(t));
    case ScheduleKind::kCosineWarmup: {
      if (t < warmup_steps) return base_eta * (t + 1.0) / warmup_steps;
      const double progress =
          static_cast<double>(t - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
      return base_eta * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
    }
  }
  return base_eta;
}

std::vector<double> ScheduleSpec::etas() const {
  validate();
  std::vector<double> out(static_cast<std::size_t>(total_steps));
  for (int t = 0; t < total_steps; ++t) out[t] = eta(t);
  return out;
}

double ScheduleSpec::sum() const {
  double total = 0.0;
  for (double v : etas()) total += v;
  return total;
}

double ScheduleSpec::sum_squares() const {
  double total = 0.0;
  for (double v : etas()) total += v * v;
  return total;
}

ScheduleKind parse_schedule_kind(const std::string& name) {
  if (name == "constant") return ScheduleKind::kConstant;
  if (name == "cosine-with-warmup" || name == "cosine") return ScheduleKind::kCosineWarmup;
  if (name == "inverse-t") return ScheduleKind::kInverseT;
  if (name == "custom") return ScheduleKind::kCustom;
  throw std::invalid_argument("unknown schedule kind '" + name + "'");
}

std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::kConstant:
      return "constant";
    case ScheduleKind::kCosineWarmup:
      return "cosine-with-warmup";
    case ScheduleKind::kInverseT:
      return "inverse-t";
    case ScheduleKind::kCustom:
      return "custom";
  }
  return "constant";
}

}  // namespace clalign
