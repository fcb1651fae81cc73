#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "clalign/schedule.hpp"
#include "json.hpp"

namespace clalign::verify {

inline constexpr double kIdentityTol = 1e-9;
inline constexpr double kInequalitySlack = 1e-7;

struct CheckReport {
  std::string name;
  int trials = 0;
  int violations = 0;
  /// min over comparisons of (bound - observed); +inf when nothing was compared.
  double worst_margin = std::numeric_limits<double>::infinity();
  double tolerance = 0.0;
  bool passed = true;
  std::vector<std::uint64_t> violating_seeds;
  std::vector<std::string> notes;
  /// Monte Carlo checks: observed event frequency against budget + 3 sigma.
  std::optional<double> frequency;
  std::optional<double> allowed;

  /// Compares observed <= bound + tolerance.
  void record(double bound, double observed, std::uint64_t seed);
  /// Exact and inequality checks pass iff there were no violations.
  void finalize();
  /// Monte Carlo checks pass iff failures / trials <= budget + 3 sigma.
  void finalize_frequency(int failures, double budget);
};

nlohmann::json to_json(const CheckReport& report);

struct Options {
  int trials = 1000;
  std::uint64_t seed = 0;
  int workers = 1;
};

/// CL/NSCL anchor gradients against central differences (step 1e-5), relative error < 1e-6.
CheckReport check_sim_gradients(const Options& options);
/// Encoder-lab objective gradients against central differences, relative error < 1e-5.
CheckReport check_encoder_gradients(const Options& options);
/// ||p - q||_1 = 2 alpha, q = p/(1 - alpha) on negatives, Pythagorean batch identity,
/// zero row sums of centered Grams; all at 1e-9.
CheckReport check_exact_identities(const Options& options);
/// ||g_i|| <= sqrt(2)/tau and ||G||_F <= sqrt(2/B)/tau.
CheckReport check_gradient_norms(const Options& options);
/// Gradient-map Lipschitz bound 1/(2 tau^2 B) and ||Diag(p) - pp^T|| <= 1/2.
CheckReport check_lipschitz(const std::vector<double>& taus, int batch_size,
                            const Options& options);
/// |S| e^{-1/tau} <= Z_S <= |S| e^{1/tau} for the positive, negative and full key sets.
CheckReport check_partition_sums(const Options& options);
/// ||p - q||_1 <= Delta on composition-event batches.
CheckReport check_reweighting_gap(int num_classes, int batch_size, int horizon, double delta,
                                  double tau, const Options& options);
/// Per-step similarity gradient gap <= Delta/(tau sqrt B) + D/(2 tau^2 B).
CheckReport check_per_step_gap(int num_classes, int batch_size, int horizon, double delta,
                               double tau, const Options& options);
/// Frequency of runs of T batches in which some anchor's negative fraction falls
/// below 1 - 1/C - eps, against delta + 3 sigma.
CheckReport check_batch_composition(int num_classes, int batch_size, int horizon, double delta,
                                    const Options& options);

struct SimCouplingSettings {
  int num_classes = 10;
  int per_class = 50;
  int dim = 16;
  double class_separation = 2.0;
  double noise_scale = 0.1;
  int batch_size = 128;
  double tau = 0.5;
  ScheduleSpec schedule{ScheduleKind::kConstant, 0.1, 0, 100, {}};
  double delta = 0.1;
};

/// Terminal drift against the similarity coupling bound (violation fraction vs
/// delta) and the per-step drift recurrence on composition-event steps.
CheckReport check_sim_coupling(const SimCouplingSettings& settings, const Options& options);

/// Measured CKA/RSA against (1 - rho)/(1 + rho) and (1 - r)/(1 + r) with rho, r
/// from the measured drift, plus the bound-driven values, over coupled runs
/// with randomized settings.
CheckReport check_metric_bounds(const Options& options);

struct ParamCouplingSettings {
  int num_classes = 10;
  int per_class = 10;
  int dim = 8;
  double class_separation = 2.0;
  double noise_scale = 0.1;
  int batch_size = 16;
  double tau = 0.5;
  ScheduleSpec schedule{ScheduleKind::kConstant, 0.05, 0, 20, {}};
  double delta = 0.1;
  int hidden_dim = 8;
  int output_dim = 6;
};

/// Per-step parameter-gradient gap at shared w against (G/tau) Delta, with G the
/// largest pairwise similarity-gradient norm in the batch.
CheckReport check_param_coupling(const ParamCouplingSettings& settings, const Options& options);
/// Terminal e_T against the parameter drift bound with estimated (beta, G). The
/// constants are lower estimates, so violations are reported, not failed.
CheckReport check_param_drift(const ParamCouplingSettings& settings, const Options& options);

struct FidelitySettings {
  int num_classes = 4;
  int per_class = 10;
  int dim = 8;
  double class_separation = 2.0;
  double noise_scale = 0.1;
  int batch_size = 8;
  double tau = 0.5;
  ScheduleSpec schedule{ScheduleKind::kConstant, 1e-6, 0, 1, {}};
  int hidden_dim = 8;
  int output_dim = 6;
  double safety_factor = 2.0;
};

struct FidelityRun {
  double measured = 0.0;
  double bound = 0.0;
  double l_sigma = 0.0;
  double m_sigma = 0.0;
  std::vector<double> xi;
};

/// Parameter-space SGD and similarity descent from the same induced Sigma_0 with
/// shared batches on the fixed reference views. With `estimate_constants`,
/// L_sigma (power iteration on J^T J) and M_sigma (observed second-order
/// remainders) are estimated along the trajectory and inflated by the safety factor.
FidelityRun surrogate_fidelity_run(const FidelitySettings& settings, std::uint64_t seed,
                                   bool estimate_constants);

/// Small-step limit, T = 0 and the inflated-constant bound over seeded runs.
CheckReport check_surrogate_fidelity(const FidelitySettings& settings, const Options& options);

/// Runs every check. Batch composition uses 10x the trial count; the run-based
/// checks use trials/5 (sim coupling, metrics), /50 (parameter coupling,
/// fidelity) and /100 (parameter drift).
std::vector<CheckReport> run_all(const Options& options);

}  // namespace clalign::verify
