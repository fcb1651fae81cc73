#pragma once

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "clalign/schedule.hpp"
#include "json.hpp"

namespace clalign::bounds {

/// Raised when eps_{B,delta} >= 1 - 1/C: the composition event cannot be
/// guaranteed and the reweighting factor is undefined.
class DenominatorNonpositive : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// sqrt(log(TB/delta) / (2B)); zero when TB/delta <= 1 (see is_degenerate_confidence).
double epsilon_B_delta(int batch_size, int horizon, double delta);

/// True when delta >= TB, where the log term would be non-positive.
bool is_degenerate_confidence(int batch_size, int horizon, double delta);

/// 2 e^{2/tau} (1/C + eps) / (1 - 1/C - eps).
double delta_C(double num_classes, int batch_size, int horizon, double delta, double tau);

/// Same factor from an explicit epsilon.
double delta_from_epsilon(double num_classes, double epsilon, double tau);

/// exp(S/(2 tau^2 B)) * S/(tau sqrt(B)) * Delta, S = sum of step sizes.
double sim_coupling_bound(double sum_eta, double tau, int batch_size, double delta_factor);

/// Per-step drift recurrence: (1 + eta/(2 tau^2 B)) D + eta Delta/(tau sqrt B).
double drift_recurrence_step(double drift, double eta, double tau, int batch_size,
                             double delta_factor);

/// Per-step similarity gradient gap bound: Delta/(tau sqrt B) + D/(2 tau^2 B).
double per_step_gap_bound(double drift, double tau, int batch_size, double delta_factor);

double rho_from_drift(double drift_bound, double gram_norm);
double cka_lower(double rho);
double r_from_drift(double drift_bound, double num_pairs, double sigma_d);
double rsa_lower(double r);

/// G/(beta tau) * Delta * (exp(beta S) - 1).
double param_drift_bound(double g, double beta, double tau, double delta_factor, double sum_eta);

/// exp(S/(2 tau^2 B)) [ sqrt(2) C_sigma/(tau sqrt B) S + M/2 sum eta_t^2 xi_t ],
/// with C_sigma = L^2 + 1.
double surrogate_fidelity_bound(double l_sigma, double m_sigma, double tau, int batch_size,
                                std::span<const double> etas, std::span<const double> xi);

struct BoundInputs {
  double num_classes = 10;
  int batch_size = 128;
  int horizon = 100;
  double delta = 0.1;
  double tau = 0.5;
  ScheduleSpec schedule;
  std::optional<double> beta;
  std::optional<double> g;
  std::optional<double> gram_norm;
  std::optional<double> sigma_d;
  std::optional<double> num_pairs;
  std::optional<double> l_sigma;
  std::optional<double> m_sigma;
  std::vector<double> xi;
};

/// Every field is optional in the sense that a missing input leaves the
/// corresponding output unset; `valid` records which evaluations succeeded.
struct BoundReport {
  BoundInputs inputs;
  double sum_eta = 0.0;
  double sum_eta_sq = 0.0;
  double epsilon = 0.0;
  bool degenerate_confidence = false;
  std::optional<double> delta_factor;
  std::optional<double> sim_drift_bound;
  std::optional<double> rho_t;
  std::optional<double> cka_lower;
  std::optional<double> r_t;
  std::optional<double> rsa_lower;
  std::optional<double> param_drift_bound;
  std::optional<double> surrogate_fidelity_bound;
  std::vector<std::string> notes;
};

BoundReport evaluate(const BoundInputs& inputs);

nlohmann::json to_json(const BoundInputs& inputs);
nlohmann::json to_json(const BoundReport& report);

}  // namespace clalign::bounds
