#include "clalign/verify.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "clalign/bounds.hpp"
#include "clalign/coupled_sim.hpp"
#include "clalign/datagen.hpp"
#include "clalign/encoder.hpp"
#include "clalign/metrics.hpp"
#include "clalign/parallel.hpp"
#include "clalign/rng.hpp"
#include "clalign/sim_core.hpp"

namespace clalign::verify {

void CheckReport::record(double bound, double observed, std::uint64_t seed) {
  const double margin = bound - observed;
  worst_margin = std::min(worst_margin, margin);
  if (!(observed <= bound + tolerance)) {
    ++violations;
    if (violating_seeds.size() < 20 &&
        std::find(violating_seeds.begin(), violating_seeds.end(), seed) == violating_seeds.end()) {
      violating_seeds.push_back(seed);
    }
  }
}

void CheckReport::finalize() { passed = violations == 0; }

void CheckReport::finalize_frequency(int failures, double budget) {
  const double n = std::max(trials, 1);
  frequency = failures / n;
  const double b = std::clamp(budget, 0.0, 1.0);
  allowed = budget + 3.0 * std::sqrt(b * (1.0 - b) / n);
  passed = *frequency <= *allowed && violations == 0;
}

nlohmann::json to_json(const CheckReport& r) {
  nlohmann::json j;
  j["name"] = r.name;
  j["passed"] = r.passed;
  j["trials"] = r.trials;
  j["violations"] = r.violations;
  j["tolerance"] = r.tolerance;
  j["worst_margin"] = std::isfinite(r.worst_margin) ? nlohmann::json(r.worst_margin) : nullptr;
  j["violating_seeds"] = r.violating_seeds;
  j["notes"] = r.notes;
  if (r.frequency) j["frequency"] = *r.frequency;
  if (r.allowed) j["allowed"] = *r.allowed;
  return j;
}

namespace {

enum CheckTag : std::int64_t {
  kTagSimGrad = 1,
  kTagEncGrad,
  kTagIdentities,
  kTagNorms,
  kTagLipschitz,
  kTagPartition,
  kTagReweight,
  kTagPerStep,
  kTagComposition,
  kTagSimCoupling,
  kTagMetric,
  kTagParamCoupling,
  kTagParamDrift,
  kTagFidelity,
};

struct Comparison {
  double bound = 0.0;
  double observed = 0.0;
};

struct TrialResult {
  std::uint64_t seed = 0;
  std::vector<Comparison> comparisons;
  int failures = 0;
  int skipped = 0;
  int flagged = 0;
};

std::uint64_t trial_seed(const Options& o, CheckTag tag, int i) {
  return derive_seed(o.seed, Stream::kTrial, tag, i);
}

std::vector<TrialResult> run_trials(int n, const Options& o, CheckTag tag,
                                    const std::function<void(std::uint64_t, TrialResult&)>& fn) {
  return parallel_map<TrialResult>(static_cast<std::size_t>(std::max(n, 0)), o.workers,
                                   [&](std::size_t i) {
                                     TrialResult r;
                                     r.seed = trial_seed(o, tag, static_cast<int>(i));
                                     fn(r.seed, r);
                                     return r;
                                   });
}

struct Totals {
  int failures = 0;
  int skipped = 0;
  int flagged = 0;
};

Totals absorb(CheckReport& report, const std::vector<TrialResult>& results) {
  Totals totals;
  report.trials += static_cast<int>(results.size());
  for (const auto& r : results) {
    for (const auto& c : r.comparisons) report.record(c.bound, c.observed, r.seed);
    totals.failures += r.failures;
    totals.skipped += r.skipped;
    totals.flagged += r.flagged;
    if (r.failures > 0 && report.violating_seeds.size() < 20) report.violating_seeds.push_back(r.seed);
  }
  return totals;
}

std::string count_note(int count, const std::string& what) {
  std::ostringstream s;
  s << count << ' ' << what;
  return s.str();
}

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

double pick(Rng& rng, std::initializer_list<double> values) {
  const int k = uniform_int(rng, 0, static_cast<int>(values.size()) - 1);
  return *(values.begin() + k);
}

// Random anchor with at least one negative; logits in [-1, 1].
AnchorView random_anchor(Rng& rng) {
  AnchorView av;
  const int n = uniform_int(rng, 2, 40);
  av.tau = pick(rng, {0.1, 0.25, 0.5, 1.0, 2.0});
  av.positive = uniform_int(rng, 0, n - 1);
  const double pos_rate = uniform(rng, 0.0, 0.6);
  for (int k = 0; k < n; ++k) {
    av.keys.push_back(k + 1);
    av.logits.push_back(uniform(rng, -1.0, 1.0));
    av.same_class.push_back(k == av.positive || uniform(rng, 0.0, 1.0) < pos_rate ? 1 : 0);
  }
  if (av.num_negatives() == 0) av.same_class[(av.positive + 1) % n] = 0;
  return av;
}

std::vector<int> random_labels(Rng& rng, int batch_size, int num_classes) {
  std::vector<int> labels(batch_size);
  for (int& y : labels) y = uniform_int(rng, 0, num_classes - 1);
  return labels;
}

// Symmetric 2B x 2B view similarity with unit diagonal. Half of the draws are
// pushed towards the adversarial state (same class +1, other class -1).
Eigen::MatrixXd random_view_sim(Rng& rng, std::span<const int> labels) {
  const int n = 2 * static_cast<int>(labels.size());
  const bool adversarial = uniform(rng, 0.0, 1.0) < 0.5;
  const double jitter = uniform(rng, 0.0, 0.5);
  Eigen::MatrixXd s = Eigen::MatrixXd::Identity(n, n);
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      double x = uniform(rng, -1.0, 1.0);
      if (adversarial) {
        const double target = labels[u / 2] == labels[v / 2] ? 1.0 : -1.0;
        x = std::clamp(target + jitter * x, -1.0, 1.0);
      }
      s(u, v) = x;
      s(v, u) = x;
    }
  }
  return s;
}

Eigen::MatrixXd perturb(Rng& rng, const Eigen::MatrixXd& s) {
  const double scale = std::pow(10.0, uniform(rng, -4.0, 0.0));
  Eigen::MatrixXd out = s;
  for (int u = 0; u < s.rows(); ++u) {
    for (int v = u + 1; v < s.cols(); ++v) {
      const double x = std::clamp(s(u, v) + scale * uniform(rng, -1.0, 1.0), -1.0, 1.0);
      out(u, v) = x;
      out(v, u) = x;
    }
  }
  return out;
}

double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& reference) {
  return (analytic - reference).norm() / std::max(reference.norm(), 1e-12);
}

Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                   Eigen::VectorXd x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double keep = x[k];
    x[k] = keep + h;
    const double up = f(x);
    x[k] = keep - h;
    const double down = f(x);
    x[k] = keep;
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

Eigen::MatrixXd dense_grad(LossKind kind, std::span<const int> labels, const Eigen::MatrixXd& sim,
                           double tau) {
  const auto anchors = make_anchor_views(labels, sim, tau);
  return batch_grad(kind, anchors, true).to_dense(static_cast<int>(sim.rows()));
}

ScheduleSpec constant_schedule(double eta, int steps) {
  return ScheduleSpec{ScheduleKind::kConstant, eta, 0, steps, {}};
}

}  // namespace

CheckReport check_sim_gradients(const Options& o) {
  CheckReport report;
  report.name = "sim_gradients";
  constexpr double kTol = 1e-6;
  const auto results = run_trials(std::max(o.trials, 3), o, kTagSimGrad, [](auto seed, auto& r) {
    auto rng = Rng(seed);
    AnchorView av = random_anchor(rng);
    for (LossKind kind : {LossKind::kCL, LossKind::kNSCL}) {
      const auto g = anchor_grad(kind, av);
      const Eigen::VectorXd analytic = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
      const Eigen::VectorXd x0 = Eigen::Map<const Eigen::VectorXd>(av.logits.data(), av.size());
      const auto f = [&](const Eigen::VectorXd& x) {
        AnchorView probe = av;
        probe.logits.assign(x.data(), x.data() + x.size());
        return anchor_loss(kind, probe);
      };
      r.comparisons.push_back({kTol, relative_error(analytic, central_difference(f, x0, 1e-5))});
    }
  });
  absorb(report, results);
  report.finalize();
  return report;
}

CheckReport check_encoder_gradients(const Options& o) {
  CheckReport report;
  report.name = "encoder_gradients";
  constexpr double kTol = 1e-5;
  const int instances = std::clamp(o.trials / 100, 3, 20);
  const auto results = run_trials(instances, o, kTagEncGrad, [](auto seed, auto& r) {
    auto rng = Rng(seed);
    const int m = uniform_int(rng, 3, 6);
    const int batch_size = uniform_int(rng, 3, 5);
    const double tau = pick(rng, {0.25, 0.5, 1.0});
    EncoderParams params = init_encoder(m, uniform_int(rng, 3, 6), uniform_int(rng, 2, 4), seed);
    attach_head(params, 3, seed);
    EncoderBatch batch;
    batch.views.resize(2 * batch_size, m);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index k = 0; k < batch.views.size(); ++k) batch.views.data()[k] = normal(rng);
    for (int s = 0; s < batch_size; ++s) batch.labels.push_back(s % 3);
    std::shuffle(batch.labels.begin(), batch.labels.end(), rng);
    for (Objective obj :
         {Objective::kCL, Objective::kNSCL, Objective::kSCL, Objective::kCE, Objective::kDCL}) {
      const bool head = obj == Objective::kCE;
      EncoderParams p = params;
      if (!head) p.head.reset();
      const Eigen::VectorXd analytic = loss_and_grad(obj, p, batch, tau).grad.flatten(head);
      const auto f = [&](const Eigen::VectorXd& x) {
        EncoderParams q = p;
        q.assign(x, head);
        return loss_and_grad(obj, q, batch, tau).loss;
      };
      r.comparisons.push_back(
          {kTol, relative_error(analytic, central_difference(f, p.flatten(head), 1e-5))});
    }
  });
  absorb(report, results);
  report.finalize();
  return report;
}

CheckReport check_exact_identities(const Options& o) {
  CheckReport report;
  report.name = "exact_identities";
  report.tolerance = kIdentityTol;
  const auto results = run_trials(o.trials, o, kTagIdentities, [](auto seed, auto& r) {
    auto rng = Rng(seed);
    const AnchorView av = random_anchor(rng);
    const auto sp = softmax_pair(av);
    double l1 = 0.0;
    double q_err = 0.0;
    double negative_mass = 0.0;
    for (int k = 0; k < av.size(); ++k) {
      if (!av.same_class[k]) negative_mass += sp.p[k];
    }
    for (int k = 0; k < av.size(); ++k) {
      l1 += std::abs(sp.p[k] - sp.q[k]);
      if (!av.same_class[k]) q_err = std::max(q_err, std::abs(sp.q[k] - sp.p[k] / negative_mass));
    }
    r.comparisons.push_back({0.0, std::abs(l1 - 2.0 * sp.alpha)});
    r.comparisons.push_back({0.0, q_err});

    const int batch_size = uniform_int(rng, 2, 12);
    const auto labels = random_labels(rng, batch_size, uniform_int(rng, 2, 5));
    const double tau = pick(rng, {0.1, 0.5, 1.0});
    const auto sim = random_view_sim(rng, labels);
    const auto anchors = make_anchor_views(labels, sim, tau);
    for (LossKind kind : {LossKind::kCL, LossKind::kNSCL}) {
      const auto grad = batch_grad(kind, anchors, true);
      double blocks = 0.0;
      for (const auto& a : anchors) {
        if (kind == LossKind::kNSCL && a.num_negatives() == 0) continue;
        for (double v : anchor_grad(kind, a)) blocks += v * v;
      }
      blocks /= static_cast<double>(batch_size) * batch_size;
      const double norm_sq = grad.to_dense(2 * batch_size).squaredNorm();
      r.comparisons.push_back({0.0, std::abs(norm_sq - blocks)});
    }
    const Eigen::MatrixXd centered = metrics::center(sim);
    r.comparisons.push_back({0.0, centered.rowwise().sum().cwiseAbs().maxCoeff()});
    r.comparisons.push_back({0.0, centered.colwise().sum().cwiseAbs().maxCoeff()});
  });
  absorb(report, results);
  report.finalize();
  return report;
}

CheckReport check_gradient_norms(const Options& o) {
  CheckReport report;
  report.name = "gradient_norms";
  report.tolerance = kInequalitySlack;
  const auto results = run_trials(o.trials, o, kTagNorms, [](auto seed, auto& r) {
    auto rng = Rng(seed);
    const AnchorView av = random_anchor(rng);
    for (LossKind kind : {LossKind::kCL, LossKind::kNSCL}) {
      const auto g = anchor_grad(kind, av);
      const double norm = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size()).norm();
      r.comparisons.push_back({std::sqrt(2.0) / av.tau, norm});
    }
    const int batch_size = uniform_int(rng, 2, 16);
    const auto labels = random_labels(rng, batch_size, uniform_int(rng, 2, 6));
    const double tau = pick(rng, {0.1, 0.5, 1.0});
    const auto sim = random_view_sim(rng, labels);
    const auto anchors = make_anchor_views(labels, sim, tau);
    for (LossKind kind : {LossKind::kCL, LossKind::kNSCL}) {
      r.comparisons.push_back({std::sqrt(2.0 / batch_size) / tau,
                               batch_grad(kind, anchors, true).frobenius_norm()});
    }
  });
  absorb(report, results);
  report.finalize();
  return report;
}

CheckReport check_lipschitz(const std::vector<double>& taus, int batch_size, const Options& o) {
  CheckReport report;
  report.name = "lipschitz";
  report.tolerance = kInequalitySlack;
  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    const double tau = taus[ti];
    Options sub = o;
    sub.seed = derive_seed(o.seed, Stream::kTrial, kTagLipschitz, static_cast<std::int64_t>(ti));
    const auto results = run_trials(o.trials, sub, kTagLipschitz, [&](auto seed, auto& r) {
      auto rng = Rng(seed);
      const auto labels = random_labels(rng, batch_size, uniform_int(rng, 2, 10));
      const auto a = random_view_sim(rng, labels);
      const auto b = perturb(rng, a);
      const double lip = 1.0 / (2.0 * tau * tau * batch_size);
      for (LossKind kind : {LossKind::kCL, LossKind::kNSCL}) {
        const double diff =
            (dense_grad(kind, labels, a, tau) - dense_grad(kind, labels, b, tau)).norm();
        r.comparisons.push_back({lip * (a - b).norm(), diff});
      }
      const auto anchors = make_anchor_views(labels, a, tau);
      const auto& av = anchors[uniform_int(rng, 0, batch_size - 1)];
      const auto p = softmax_tau(av.logits, tau);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(softmax_jacobian(p),
                                                         Eigen::EigenvaluesOnly);
      r.comparisons.push_back({0.5, eig.eigenvalues().cwiseAbs().maxCoeff()});
    });
    absorb(report, results);
  }
  report.finalize();
  return report;
}

CheckReport check_partition_sums(const Options& o) {
  CheckReport report;
  report.name = "partition_sums";
  report.tolerance = kInequalitySlack;
  const auto results = run_trials(o.trials, o, kTagPartition, [](auto seed, auto& r) {
    auto rng = Rng(seed);
    const AnchorView av = random_anchor(rng);
    const auto sp = softmax_pair(av);
    const double n_neg = av.num_negatives();
    const double n_pos = av.size() - n_neg;
    const double lo = std::exp(-1.0 / av.tau);
    const double hi = std::exp(1.0 / av.tau);
    // Checked relative to the upper bound so the slack is scale-free.
    auto both = [&](double count, double z) {
      const double scale = count * hi;
      r.comparisons.push_back({1.0, z / scale});
      r.comparisons.push_back({z / scale, count * lo / scale});
    };
    both(n_pos, sp.z_pos);
    both(n_neg, sp.z_neg);
    both(av.size(), sp.z_pos + sp.z_neg);
  });
  absorb(report, results);
  report.finalize();
  return report;
}

namespace {

struct CompositionSetup {
  Dataset data;
  double epsilon = 0.0;
  double delta_factor = 0.0;
};

CompositionSetup composition_setup(int num_classes, int batch_size, int horizon, double delta,
                                   double tau, std::uint64_t seed) {
  CompositionSetup s;
  s.data = make_dataset(num_classes, std::max(4, 2 * batch_size / num_classes), 2, 1.0, seed);
  s.epsilon = bounds::epsilon_B_delta(batch_size, horizon, delta);
  s.delta_factor = bounds::delta_from_epsilon(num_classes, s.epsilon, tau);
  return s;
}

}  // namespace

CheckReport check_reweighting_gap(int num_classes, int batch_size, int horizon, double delta,
                                  double tau, const Options& o) {
  CheckReport report;
  report.name = "reweighting_gap";
  report.tolerance = kInequalitySlack;
  const auto setup = composition_setup(num_classes, batch_size, horizon, delta, tau,
                                       derive_seed(o.seed, Stream::kTrial, kTagReweight, -1));
  const auto results = run_trials(o.trials, o, kTagReweight, [&](auto seed, auto& r) {
    const auto draw = draw_batch(setup.data, batch_size, 0, seed);
    if (!composition_event_holds(draw, num_classes, setup.epsilon)) {
      ++r.skipped;
      return;
    }
    auto rng = Rng(seed);
    const auto sim = random_view_sim(rng, draw.labels);
    for (const auto& av : make_anchor_views(draw.labels, sim, tau)) {
      r.comparisons.push_back({setup.delta_factor, reweighting_gap(softmax_pair(av)).l1});
    }
  });
  const auto totals = absorb(report, results);
  report.notes.push_back(count_note(totals.skipped, "batches outside the composition event"));
  report.finalize();
  return report;
}

CheckReport check_per_step_gap(int num_classes, int batch_size, int horizon, double delta,
                               double tau, const Options& o) {
  CheckReport report;
  report.name = "per_step_gap";
  report.tolerance = kInequalitySlack;
  const auto setup = composition_setup(num_classes, batch_size, horizon, delta, tau,
                                       derive_seed(o.seed, Stream::kTrial, kTagPerStep, -1));
  const auto results = run_trials(o.trials, o, kTagPerStep, [&](auto seed, auto& r) {
    const auto draw = draw_batch(setup.data, batch_size, 0, seed);
    if (!composition_event_holds(draw, num_classes, setup.epsilon)) {
      ++r.skipped;
      return;
    }
    auto rng = Rng(seed);
    const auto cl = random_view_sim(rng, draw.labels);
    const auto nscl = uniform(rng, 0.0, 1.0) < 0.5 ? perturb(rng, cl)
                                                   : random_view_sim(rng, draw.labels);
    const double gap = (dense_grad(LossKind::kCL, draw.labels, cl, tau) -
                        dense_grad(LossKind::kNSCL, draw.labels, nscl, tau))
                           .norm();
    const double bound =
        bounds::per_step_gap_bound((cl - nscl).norm(), tau, batch_size, setup.delta_factor);
    r.comparisons.push_back({bound, gap});
  });
  const auto totals = absorb(report, results);
  report.notes.push_back(count_note(totals.skipped, "batches outside the composition event"));
  report.finalize();
  return report;
}

CheckReport check_batch_composition(int num_classes, int batch_size, int horizon, double delta,
                                    const Options& o) {
  CheckReport report;
  report.name = "batch_composition";
  const double epsilon = bounds::epsilon_B_delta(batch_size, horizon, delta);
  const Dataset data = make_dataset(num_classes, 10, 2, 1.0,
                                    derive_seed(o.seed, Stream::kTrial, kTagComposition, -1));
  const auto results = run_trials(o.trials, o, kTagComposition, [&](auto seed, auto& r) {
    for (int t = 0; t < horizon; ++t) {
      if (!composition_event_holds(draw_batch(data, batch_size, t, seed), num_classes, epsilon)) {
        r.failures = 1;
        return;
      }
    }
  });
  Totals totals;
  report.trials = static_cast<int>(results.size());
  for (const auto& r : results) totals.failures += r.failures;
  report.finalize_frequency(totals.failures, delta);
  if (bounds::is_degenerate_confidence(batch_size, horizon, delta)) {
    report.notes.push_back("degenerate confidence: delta >= TB, epsilon set to 0");
  }
  return report;
}

CheckReport check_sim_coupling(const SimCouplingSettings& s, const Options& o) {
  CheckReport report;
  report.name = "sim_coupling";
  report.tolerance = kInequalitySlack;
  const int horizon = s.schedule.total_steps;
  const double delta_factor =
      bounds::delta_C(s.num_classes, s.batch_size, horizon, s.delta, s.tau);
  const double bound =
      bounds::sim_coupling_bound(s.schedule.sum(), s.tau, s.batch_size, delta_factor);
  const auto results = run_trials(o.trials, o, kTagSimCoupling, [&](auto seed, auto& r) {
    const Dataset data =
        make_dataset(s.num_classes, s.per_class, s.dim, s.class_separation, seed);
    CoupledSimConfig config;
    config.batch_size = s.batch_size;
    config.schedule = s.schedule;
    config.tau = s.tau;
    config.master_seed = seed;
    config.delta = s.delta;
    const auto trace = run_coupled(data, {s.noise_scale, seed}, config);
    if (trace.terminal_drift() > bound + kInequalitySlack) r.failures = 1;
    for (int t = 0; t < horizon; ++t) {
      const auto& step = trace.steps[t];
      if (!step.composition_ok) continue;
      r.comparisons.push_back(
          {bounds::drift_recurrence_step(step.drift, step.eta, s.tau, s.batch_size, delta_factor),
           trace.steps[t + 1].drift});
    }
    r.flagged = trace.total_clip_events() > 0 ? 1 : 0;
  });
  const auto totals = absorb(report, results);
  report.notes.push_back("bound " + std::to_string(bound));
  report.notes.push_back(count_note(totals.failures, "runs with terminal drift above the bound"));
  report.notes.push_back(count_note(totals.flagged, "runs with clip events"));
  report.finalize_frequency(totals.failures, s.delta);
  return report;
}

CheckReport check_metric_bounds(const Options& o) {
  CheckReport report;
  report.name = "metric_bounds";
  report.tolerance = kInequalitySlack;
  const auto results = run_trials(o.trials, o, kTagMetric, [](auto seed, auto& r) {
    auto rng = Rng(seed);
    const int num_classes = static_cast<int>(pick(rng, {2, 3, 4, 10}));
    const int per_class = std::max(2, uniform_int(rng, 24, 60) / num_classes);
    const double tau = pick(rng, {0.2, 0.5, 1.0});
    CoupledSimConfig config;
    config.batch_size = static_cast<int>(pick(rng, {4, 8, 16}));
    config.tau = tau;
    config.master_seed = seed;
    config.schedule = constant_schedule(uniform(rng, 0.05, 2.0), uniform_int(rng, 1, 50));
    const Dataset data = make_dataset(num_classes, per_class, 8, 2.0, seed);
    const auto trace = run_coupled(data, {0.1, seed}, config);
    const auto& a = trace.final_cl.entries;
    const auto& b = trace.final_nscl.entries;
    double cka = 0.0;
    double rho = 0.0;
    try {
      cka = metrics::linear_cka_gram(a, b);
      rho = metrics::measured_rho(a, b);
    } catch (const std::exception&) {
      ++r.skipped;
      return;
    }
    r.comparisons.push_back({cka, bounds::cka_lower(rho)});
    try {
      const double rsa = metrics::rsa_gram(a, b);
      r.comparisons.push_back({rsa, bounds::rsa_lower(metrics::measured_r(a, b))});
    } catch (const std::exception&) {
      ++r.skipped;
    }
    double delta_factor = 0.0;
    try {
      delta_factor = bounds::delta_C(num_classes, config.batch_size,
                                     config.schedule.total_steps, config.delta, tau);
    } catch (const bounds::DenominatorNonpositive&) {
      return;
    }
    const double bound = bounds::sim_coupling_bound(config.schedule.sum(), tau,
                                                    config.batch_size, delta_factor);
    if (trace.terminal_drift() > bound) return;
    const double gram_norm = metrics::center(a).norm();
    if (gram_norm > 0.0) {
      r.comparisons.push_back({cka, bounds::cka_lower(bounds::rho_from_drift(bound, gram_norm))});
    }
  });
  const auto totals = absorb(report, results);
  report.notes.push_back(count_note(totals.skipped, "metric evaluations undefined"));
  report.finalize();
  return report;
}

CheckReport check_param_coupling(const ParamCouplingSettings& s, const Options& o) {
  CheckReport report;
  report.name = "param_coupling";
  report.tolerance = kInequalitySlack;
  const int horizon = s.schedule.total_steps;
  const double epsilon = bounds::epsilon_B_delta(s.batch_size, horizon, s.delta);
  const double delta_factor = bounds::delta_from_epsilon(s.num_classes, epsilon, s.tau);
  const auto etas = s.schedule.etas();
  const auto results = run_trials(o.trials, o, kTagParamCoupling, [&](auto seed, auto& r) {
    const Dataset data =
        make_dataset(s.num_classes, s.per_class, s.dim, s.class_separation, seed);
    const AugmentationKernel kernel{s.noise_scale, seed};
    EncoderParams w = init_encoder(s.dim, s.hidden_dim, s.output_dim, seed);
    for (int t = 0; t < horizon; ++t) {
      const auto draw = draw_batch(data, s.batch_size, t, seed);
      const auto batch = make_encoder_batch(data, kernel, draw);
      const auto cl = loss_and_grad(Objective::kCL, w, batch, s.tau);
      if (composition_event_holds(draw, s.num_classes, epsilon)) {
        const auto nscl = loss_and_grad(Objective::kNSCL, w, batch, s.tau);
        const double gap = (cl.grad.flatten(false) - nscl.grad.flatten(false)).norm();
        r.comparisons.push_back(
            {max_pair_gradient_norm(w, batch) / s.tau * delta_factor, gap});
      } else {
        ++r.skipped;
      }
      w.axpy(-etas[t], cl.grad);
    }
  });
  const auto totals = absorb(report, results);
  report.notes.push_back(count_note(totals.skipped, "steps outside the composition event"));
  report.finalize();
  return report;
}

CheckReport check_param_drift(const ParamCouplingSettings& s, const Options& o) {
  CheckReport report;
  report.name = "param_drift";
  report.tolerance = kInequalitySlack;
  const int horizon = s.schedule.total_steps;
  const double delta_factor =
      bounds::delta_C(s.num_classes, s.batch_size, horizon, s.delta, s.tau);
  const double sum_eta = s.schedule.sum();
  const auto results = run_trials(o.trials, o, kTagParamDrift, [&](auto seed, auto& r) {
    const Dataset data =
        make_dataset(s.num_classes, s.per_class, s.dim, s.class_separation, seed);
    const AugmentationKernel kernel{s.noise_scale, seed};
    CoupledEncoderConfig config;
    config.batch_size = s.batch_size;
    config.schedule = s.schedule;
    config.tau = s.tau;
    config.master_seed = seed;
    config.hidden_dim = s.hidden_dim;
    config.output_dim = s.output_dim;
    const auto probe = make_probe_set(data, 16, s.class_separation, seed);
    const auto trace = run_coupled_encoders(data, kernel, probe.points, config);
    SmoothnessOptions so;
    so.pairs = 40;
    so.radius = std::max(weight_distance(trace.initial[0], trace.final_params[0]), 1e-6);
    so.batch_size = s.batch_size;
    so.tau = s.tau;
    so.seed = seed;
    const auto est = estimate_smoothness_constants(trace.initial[0], data, kernel, so);
    if (!(est.beta > 0.0)) {
      ++r.skipped;
      return;
    }
    const double e_t = trace.series(Objective::kNSCL).back().e_t;
    r.comparisons.push_back(
        {bounds::param_drift_bound(est.g, est.beta, s.tau, delta_factor, sum_eta), e_t});
  });
  const auto totals = absorb(report, results);
  report.finalize();
  report.notes.push_back(count_note(report.violations, "runs above the bound (informational)"));
  report.notes.push_back(count_note(totals.skipped, "runs without a smoothness estimate"));
  report.notes.push_back("beta and G are estimated lower bounds of a supremum");
  report.passed = true;
  return report;
}

FidelityRun surrogate_fidelity_run(const FidelitySettings& s, std::uint64_t seed,
                                   bool estimate_constants) {
  const Dataset data = make_dataset(s.num_classes, s.per_class, s.dim, s.class_separation, seed);
  const AugmentationKernel kernel{s.noise_scale, seed};
  const Eigen::MatrixXd views = reference_views(data, kernel);
  const auto etas = s.schedule.etas();
  EncoderParams w = init_encoder(s.dim, s.hidden_dim, s.output_dim, seed);
  auto gram = [&](const EncoderParams& p) { return metrics::cosine_gram(embed(p, views)); };
  SimState surrogate{gram(w)};

  FidelityRun run;
  auto rng = make_rng(seed, Stream::kTrial, kTagFidelity);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int t = 0; t < static_cast<int>(etas.size()); ++t) {
    const auto draw = draw_batch(data, s.batch_size, t, seed);
    const auto slots = view_slots(draw);
    Eigen::MatrixXd batch_views(slots.size(), views.cols());
    for (std::size_t k = 0; k < slots.size(); ++k) batch_views.row(k) = views.row(slots[k]);

    const Eigen::MatrixXd sim_w = gram(w);
    Eigen::MatrixXd gathered(slots.size(), slots.size());
    for (std::size_t a = 0; a < slots.size(); ++a) {
      for (std::size_t b = 0; b < slots.size(); ++b) gathered(a, b) = sim_w(slots[a], slots[b]);
    }
    const Eigen::MatrixXd g_sim =
        similarity_gradient(Objective::kCL, draw.labels, gathered, s.tau);
    const EncoderParams g_w = similarity_vjp(w, batch_views, g_sim);
    run.xi.push_back(g_w.flatten(false).squaredNorm());

    if (estimate_constants) {
      EncoderParams v = w.zeros_like();
      Eigen::VectorXd flat(v.num_params(false));
      for (Eigen::Index k = 0; k < flat.size(); ++k) flat[k] = normal(rng);
      v.assign(flat.normalized(), false);
      double lambda = 0.0;
      for (int it = 0; it < 50; ++it) {
        const EncoderParams jtj = similarity_vjp(w, views, similarity_jvp(w, views, v));
        const Eigen::VectorXd next = jtj.flatten(false);
        lambda = next.norm();
        if (!(lambda > 0.0)) break;
        v.assign(next / lambda, false);
      }
      run.l_sigma = std::max(run.l_sigma, std::sqrt(lambda));
    }

    EncoderParams next = w;
    next.axpy(-etas[t], g_w);
    if (estimate_constants) {
      EncoderParams step = next;
      step.axpy(-1.0, w);
      const double step_sq = step.flatten(false).squaredNorm();
      if (step_sq > 0.0) {
        const Eigen::MatrixXd remainder = gram(next) - sim_w - similarity_jvp(w, views, step);
        run.m_sigma = std::max(run.m_sigma, 2.0 * remainder.norm() / step_sq);
      }
    }
    w = std::move(next);

    const auto anchors = make_anchor_views(draw.labels, gather_view_sim(surrogate, slots), s.tau);
    surrogate_step(surrogate, batch_grad(LossKind::kCL, anchors), slots, etas[t]);
  }
  run.measured = (gram(w) - surrogate.entries).norm();
  if (estimate_constants) {
    run.bound = bounds::surrogate_fidelity_bound(s.safety_factor * run.l_sigma,
                                                 s.safety_factor * run.m_sigma, s.tau,
                                                 s.batch_size, etas, run.xi);
  }
  return run;
}

CheckReport check_surrogate_fidelity(const FidelitySettings& s, const Options& o) {
  CheckReport report;
  report.name = "surrogate_fidelity";
  report.tolerance = kInequalitySlack;
  constexpr double kSmallStepLimit = 1e-4;
  FidelitySettings zero = s;
  zero.schedule.total_steps = 0;
  FidelitySettings longer = s;
  longer.schedule = constant_schedule(0.05, 20);
  const int runs = std::max(1, o.trials);
  const auto results = run_trials(runs, o, kTagFidelity, [&](auto seed, auto& r) {
    const auto small = surrogate_fidelity_run(s, seed, true);
    r.comparisons.push_back({kSmallStepLimit, small.measured});
    r.comparisons.push_back({small.bound, small.measured});
    r.comparisons.push_back({0.0, surrogate_fidelity_run(zero, seed, false).measured});
    const auto run = surrogate_fidelity_run(longer, seed, true);
    r.comparisons.push_back({run.bound, run.measured});
  });
  absorb(report, results);
  double small_max = 0.0;
  int small_over = 0;
  int bound_over = 0;
  for (const auto& r : results) {
    small_max = std::max(small_max, r.comparisons[0].observed);
    small_over += r.comparisons[0].observed > kSmallStepLimit ? 1 : 0;
    for (std::size_t k : {1u, 3u}) {
      bound_over += r.comparisons[k].observed > r.comparisons[k].bound + kInequalitySlack ? 1 : 0;
    }
  }
  std::ostringstream small;
  small << "small-step gap max " << small_max << " (limit " << kSmallStepLimit << "), "
        << small_over << " runs above";
  report.notes.push_back(small.str());
  report.notes.push_back(count_note(bound_over, "bound comparisons exceeded"));
  report.notes.push_back("L_sigma and M_sigma are estimated and inflated by the safety factor");
  report.finalize();
  return report;
}

std::vector<CheckReport> run_all(const Options& o) {
  auto scaled = [&](int divisor, int minimum) {
    Options sub = o;
    sub.trials = std::max(minimum, o.trials / divisor);
    return sub;
  };
  Options many = o;
  many.trials = 10 * o.trials;
  std::vector<CheckReport> out;
  out.push_back(check_sim_gradients(o));
  out.push_back(check_encoder_gradients(o));
  out.push_back(check_exact_identities(o));
  out.push_back(check_gradient_norms(o));
  out.push_back(check_lipschitz({0.1, 0.5, 1.0}, 16, o));
  out.push_back(check_partition_sums(o));
  out.push_back(check_reweighting_gap(10, 32, 100, 0.1, 0.5, o));
  out.push_back(check_per_step_gap(10, 32, 100, 0.1, 0.5, o));
  out.push_back(check_batch_composition(10, 128, 100, 0.1, many));
  out.push_back(check_sim_coupling({}, scaled(5, 1)));
  out.push_back(check_metric_bounds(scaled(5, 1)));
  out.push_back(check_param_coupling({}, scaled(50, 1)));
  out.push_back(check_param_drift({}, scaled(100, 1)));
  out.push_back(check_surrogate_fidelity({}, scaled(50, 1)));
  return out;
}

}  // namespace clalign::verify
