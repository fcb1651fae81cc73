#pragma once

#include <string>
#include <vector>

namespace clalign {

enum class ScheduleKind { kConstant, kCosineWarmup, kInverseT, kCustom };

/// Step-size schedule over a fixed horizon of `total_steps`.
struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kConstant;
  double base_eta = 0.1;
  int warmup_steps = 0;
  int total_steps = 0;
  std::vector<double> custom;  // used when kind == kCustom; size must be total_steps

  /// Throws std::invalid_argument when any eta_t would be non-positive.
  void validate() const;
  double eta(int t) const;
  std::vector<double> etas() const;
  double sum() const;
  double sum_squares() const;
};

ScheduleKind parse_schedule_kind(const std::string& name);
std::string to_string(ScheduleKind kind);

}  // namespace clalign
