#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "clalign/datagen.hpp"
#include "clalign/schedule.hpp"
#include "clalign/sim_core.hpp"

namespace clalign {

/// Similarity matrix over 2N view slots: slot 2i is the first reference view of
/// base sample i, slot 2i+1 the second. Symmetric, unit diagonal, entries in [-1, 1].
struct SimState {
  Eigen::MatrixXd entries;

  int num_slots() const { return static_cast<int>(entries.rows()); }
  /// Checks symmetry, unit diagonal and the [-1, 1] range within `tol`.
  bool is_valid(double tol = 1e-12) const;
};

/// The 2N reference views (rows), generated with augmentation step key -1.
Eigen::MatrixXd reference_views(const Dataset& data, const AugmentationKernel& kernel);

SimState init_sim_state(const Dataset& data, const AugmentationKernel& kernel);

/// Slot of each batch view: view 2s+v of position s maps to 2*base[s]+v.
std::vector<int> view_slots(const BatchDraw& batch);

/// 2B x 2B similarity matrix of the batch views gathered from the state.
Eigen::MatrixXd gather_view_sim(const SimState& state, std::span<const int> slots);

struct StepStats {
  int clip_events = 0;
};

/// Applies entries -= eta * (U + U^T)/2 where U scatters the directed batch
/// gradient onto slot pairs (self-pairs dropped), then clips touched entries to
/// [-1, 1]. A clip event is one unordered slot pair that left the range.
StepStats surrogate_step(SimState& state, const BatchGradient& grad, std::span<const int> slots,
                         double eta);

/// ||G_CL(state_cl) - G_NSCL(state_nscl)||_F on the batch coordinates.
/// NSCL anchors without negatives contribute zero gradient.
double per_step_gap(const SimState& state_cl, const SimState& state_nscl,
                    const BatchDraw& batch, double tau);

struct CoupledSimConfig {
  int batch_size = 128;
  ScheduleSpec schedule;
  double tau = 0.5;
  std::uint64_t master_seed = 0;
  /// Confidence level used to flag steps where the composition event fails.
  double delta = 0.1;
};

struct CoupledStep {
  int t = 0;
  double eta = 0.0;
  double drift = 0.0;
  double loss_cl = 0.0;
  double loss_nscl = 0.0;
  double grad_gap = 0.0;
  int clip_events = 0;
  int empty_neg_events = 0;
  bool composition_ok = true;
};

/// Rows t = 0..T-1 hold the pre-update state and step-t batch; row T is the
/// terminal state evaluated on the step-T batch with eta = 0.
struct CoupledTrace {
  std::vector<CoupledStep> steps;
  SimState initial;
  SimState final_cl;
  SimState final_nscl;
  bool composition_all = true;

  double terminal_drift() const { return steps.back().drift; }
  int total_clip_events() const;
};

CoupledTrace run_coupled(const Dataset& data, const AugmentationKernel& kernel,
                         const CoupledSimConfig& config);

void write_trace_csv(const CoupledTrace& trace, std::ostream& out);
void write_trace_csv(const CoupledTrace& trace, const std::filesystem::path& path);

}  // namespace clalign
