#include "clalign/bounds.hpp"

#include <cmath>
#include <string>

namespace clalign::bounds {
namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string(what) + " must be positive and finite");
  }
}

// Drift-style bounds share the prefactor exp(S/(2 tau^2 B)) * S/(tau sqrt B).
double growth(double sum_eta, double tau, int batch_size) {
  return std::exp(sum_eta / (2.0 * tau * tau * batch_size));
}

}  // namespace

bool is_degenerate_confidence(int batch_size, int horizon, double delta) {
  return static_cast<double>(horizon) * batch_size / delta <= 1.0;
}

double epsilon_B_delta(int batch_size, int horizon, double delta) {
  if (batch_size < 1 || horizon < 1) throw std::invalid_argument("epsilon: B and T must be >= 1");
  if (!(delta > 0.0)) throw std::invalid_argument("epsilon: delta must be positive");
  if (is_degenerate_confidence(batch_size, horizon, delta)) return 0.0;
  const double tb = static_cast<double>(horizon) * batch_size;
  return std::sqrt(std::log(tb / delta) / (2.0 * batch_size));
}

double delta_from_epsilon(double num_classes, double epsilon, double tau) {
  require_positive(tau, "tau");
  if (!(num_classes >= 1.0)) throw std::invalid_argument("delta_C: C must be >= 1");
  const double inv_c = 1.0 / num_classes;
  const double denom = 1.0 - inv_c - epsilon;
  if (!(denom > 0.0)) {
    throw DenominatorNonpositive("eps_{B,delta} >= 1 - 1/C: composition event not guaranteed");
  }
  return 2.0 * std::exp(2.0 / tau) * (inv_c + epsilon) / denom;
}

double delta_C(double num_classes, int batch_size, int horizon, double delta, double tau) {
  return delta_from_epsilon(num_classes, epsilon_B_delta(batch_size, horizon, delta), tau);
}

double sim_coupling_bound(double sum_eta, double tau, int batch_size, double delta_factor) {
  require_positive(tau, "tau");
  if (batch_size < 1) throw std::invalid_argument("B must be >= 1");
  if (sum_eta < 0.0) throw std::invalid_argument("sum of step sizes must be >= 0");
  return growth(sum_eta, tau, batch_size) * sum_eta / (tau * std::sqrt(batch_size)) *
         delta_factor;
}

double drift_recurrence_step(double drift, double eta, double tau, int batch_size,
                             double delta_factor) {
  return (1.0 + eta / (2.0 * tau * tau * batch_size)) * drift +
         eta * delta_factor / (tau * std::sqrt(batch_size));
}

double per_step_gap_bound(double drift, double tau, int batch_size, double delta_factor) {
  return delta_factor / (tau * std::sqrt(batch_size)) + drift / (2.0 * tau * tau * batch_size);
}

double rho_from_drift(double drift_bound, double gram_norm) {
  if (!(gram_norm > 0.0)) throw std::invalid_argument("centered Gram norm must be > 0");
  return drift_bound / gram_norm;
}

double cka_lower(double rho) { return (1.0 - rho) / (1.0 + rho); }

double r_from_drift(double drift_bound, double num_pairs, double sigma_d) {
  if (!(sigma_d > 0.0)) throw std::invalid_argument("sigma_D must be > 0 (constant RDM)");
  if (!(num_pairs > 0.0)) throw std::invalid_argument("M must be > 0");
  return drift_bound / (std::sqrt(num_pairs) * sigma_d);
}

double rsa_lower(double r) { return (1.0 - r) / (1.0 + r); }

double param_drift_bound(double g, double beta, double tau, double delta_factor,
                         double sum_eta) {
  require_positive(beta, "beta");
  require_positive(tau, "tau");
  return g / (beta * tau) * delta_factor * std::expm1(beta * sum_eta);
}

double surrogate_fidelity_bound(double l_sigma, double m_sigma, double tau, int batch_size,
                                std::span<const double> etas, std::span<const double> xi) {
  require_positive(tau, "tau");
  if (l_sigma < 0.0 || m_sigma < 0.0) throw std::invalid_argument("constants must be >= 0");
  if (xi.size() != etas.size()) throw std::invalid_argument("xi and eta lengths differ");
  const double c_sigma = l_sigma * l_sigma + 1.0;
  double sum_eta = 0.0;
  double curvature = 0.0;
  for (std::size_t t = 0; t < etas.size(); ++t) {
    sum_eta += etas[t];
    curvature += etas[t] * etas[t] * xi[t];
  }
  return growth(sum_eta, tau, batch_size) *
         (std::sqrt(2.0) * c_sigma / (tau * std::sqrt(batch_size)) * sum_eta +
          0.5 * m_sigma * curvature);
}

BoundReport evaluate(const BoundInputs& in) {
  BoundReport rep;
  rep.inputs = in;
  ScheduleSpec schedule = in.schedule;
  schedule.total_steps = in.horizon;
  rep.sum_eta = schedule.sum();
  rep.sum_eta_sq = schedule.sum_squares();
  rep.epsilon = epsilon_B_delta(in.batch_size, in.horizon, in.delta);
  rep.degenerate_confidence = is_degenerate_confidence(in.batch_size, in.horizon, in.delta);
  if (rep.degenerate_confidence) rep.notes.emplace_back("delta >= TB: epsilon set to 0");

  try {
    rep.delta_factor = delta_from_epsilon(in.num_classes, rep.epsilon, in.tau);
  } catch (const DenominatorNonpositive& e) {
    rep.notes.emplace_back(e.what());
    return rep;
  }
  const double drift = sim_coupling_bound(rep.sum_eta, in.tau, in.batch_size, *rep.delta_factor);
  rep.sim_drift_bound = drift;
  if (in.gram_norm && *in.gram_norm > 0.0) {
    rep.rho_t = rho_from_drift(drift, *in.gram_norm);
    rep.cka_lower = cka_lower(*rep.rho_t);
  }
  if (in.sigma_d && in.num_pairs && *in.sigma_d > 0.0) {
    rep.r_t = r_from_drift(drift, *in.num_pairs, *in.sigma_d);
    rep.rsa_lower = rsa_lower(*rep.r_t);
  }
  if (in.g && in.beta && *in.beta > 0.0) {
    rep.param_drift_bound =
        param_drift_bound(*in.g, *in.beta, in.tau, *rep.delta_factor, rep.sum_eta);
    rep.notes.emplace_back("beta and G are estimated lower bounds of a supremum");
  }
  if (in.l_sigma && in.m_sigma) {
    std::vector<double> xi = in.xi;
    if (xi.empty()) xi.assign(static_cast<std::size_t>(in.horizon), 0.0);
    const auto etas = schedule.etas();
    rep.surrogate_fidelity_bound =
        surrogate_fidelity_bound(*in.l_sigma, *in.m_sigma, in.tau, in.batch_size, etas, xi);
    rep.notes.emplace_back("L_sigma and M_sigma are estimated lower bounds of a supremum");
  }
  return rep;
}

nlohmann::json to_json(const BoundInputs& in) {
  nlohmann::json j;
  j["C"] = in.num_classes;
  j["B"] = in.batch_size;
  j["T"] = in.horizon;
  j["delta"] = in.delta;
  j["tau"] = in.tau;
  j["schedule"] = {{"kind", to_string(in.schedule.kind)},
                   {"base_eta", in.schedule.base_eta},
                   {"warmup_steps", in.schedule.warmup_steps}};
  if (in.schedule.kind == ScheduleKind::kCustom) j["schedule"]["custom"] = in.schedule.custom;
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("beta", in.beta);
  put("G", in.g);
  put("gram_norm", in.gram_norm);
  put("sigma_D", in.sigma_d);
  put("M", in.num_pairs);
  put("L_sigma", in.l_sigma);
  put("M_sigma", in.m_sigma);
  if (!in.xi.empty()) j["xi"] = in.xi;
  return j;
}

nlohmann::json to_json(const BoundReport& rep) {
  nlohmann::json j;
  j["inputs"] = to_json(rep.inputs);
  j["sum_eta"] = rep.sum_eta;
  j["sum_eta_sq"] = rep.sum_eta_sq;
  j["epsilon"] = rep.epsilon;
  auto put = [&](const char* key, const std::optional<double>& v) {
    j[key] = v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  put("delta_factor", rep.delta_factor);
  put("sim_drift_bound", rep.sim_drift_bound);
  put("rho_T", rep.rho_t);
  put("cka_lower", rep.cka_lower);
  put("r_T", rep.r_t);
  put("rsa_lower", rep.rsa_lower);
  put("param_drift_bound", rep.param_drift_bound);
  put("surrogate_fidelity_bound", rep.surrogate_fidelity_bound);
  j["validity"] = {{"degenerate_confidence", rep.degenerate_confidence},
                   {"delta_factor_defined", rep.delta_factor.has_value()}};
  j["notes"] = rep.notes;
  return j;
}

}  // namespace clalign::bounds
