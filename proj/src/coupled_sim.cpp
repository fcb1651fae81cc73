#include "clalign/coupled_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <tuple>

#include "clalign/bounds.hpp"
#include "clalign/format.hpp"
#include "clalign/metrics.hpp"

namespace clalign {

bool SimState::is_valid(double tol) const {
  if (entries.rows() != entries.cols()) return false;
  for (Eigen::Index i = 0; i < entries.rows(); ++i) {
    if (std::abs(entries(i, i) - 1.0) > tol) return false;
    for (Eigen::Index j = 0; j < entries.cols(); ++j) {
      const double v = entries(i, j);
      if (!std::isfinite(v) || v > 1.0 + tol || v < -1.0 - tol) return false;
      if (std::abs(v - entries(j, i)) > tol) return false;
    }
  }
  return true;
}

Eigen::MatrixXd reference_views(const Dataset& data, const AugmentationKernel& kernel) {
  Eigen::MatrixXd views(2 * static_cast<Eigen::Index>(data.size()), data.dim());
  for (int i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd x = data.points.row(i).transpose();
    for (int v = 0; v < 2; ++v) {
      views.row(2 * i + v) = apply_augmentation(x, kernel, {-1, i, v}).transpose();
    }
  }
  return views;
}

SimState init_sim_state(const Dataset& data, const AugmentationKernel& kernel) {
  return SimState{metrics::cosine_gram(reference_views(data, kernel))};
}

std::vector<int> view_slots(const BatchDraw& batch) {
  std::vector<int> slots(2 * static_cast<std::size_t>(batch.size()));
  for (int s = 0; s < batch.size(); ++s) {
    slots[2 * s] = 2 * batch.base_indices[s];
    slots[2 * s + 1] = 2 * batch.base_indices[s] + 1;
  }
  return slots;
}

Eigen::MatrixXd gather_view_sim(const SimState& state, std::span<const int> slots) {
  const auto n = static_cast<Eigen::Index>(slots.size());
  Eigen::MatrixXd out(n, n);
  for (Eigen::Index a = 0; a < n; ++a) {
    for (Eigen::Index b = 0; b < n; ++b) out(a, b) = state.entries(slots[a], slots[b]);
  }
  return out;
}

StepStats surrogate_step(SimState& state, const BatchGradient& grad, std::span<const int> slots,
                         double eta) {
  // Accumulate per unordered slot pair so both mirror entries receive the
  // identical increment and stay bit-for-bit symmetric.
  std::vector<std::tuple<int, int, double>> touched;
  for (const auto& block : grad.blocks) {
    const int a = slots[block.anchor];
    for (std::size_t k = 0; k < block.keys.size(); ++k) {
      const int b = slots[block.keys[k]];
      if (a == b) continue;
      touched.emplace_back(std::min(a, b), std::max(a, b), block.values[k]);
    }
  }
  std::sort(touched.begin(), touched.end(), [](const auto& x, const auto& y) {
    return std::tie(std::get<0>(x), std::get<1>(x)) < std::tie(std::get<0>(y), std::get<1>(y));
  });

  StepStats stats;
  std::size_t k = 0;
  while (k < touched.size()) {
    const auto [i, j, first] = touched[k];
    double total = first;
    std::size_t next = k + 1;
    while (next < touched.size() && std::get<0>(touched[next]) == i &&
           std::get<1>(touched[next]) == j) {
      total += std::get<2>(touched[next]);
      ++next;
    }
    double value = state.entries(i, j) - eta * 0.5 * total;
    if (value > 1.0 || value < -1.0) {
      value = std::clamp(value, -1.0, 1.0);
      ++stats.clip_events;
    }
    state.entries(i, j) = value;
    state.entries(j, i) = value;
    k = next;
  }
  return stats;
}

namespace {

struct SideEval {
  std::vector<AnchorView> anchors;
  BatchGradient grad;
  double loss = 0.0;
};

SideEval evaluate_side(LossKind kind, const SimState& state, const BatchDraw& batch,
                       std::span<const int> slots, double tau) {
  SideEval side;
  side.anchors = make_anchor_views(batch.labels, gather_view_sim(state, slots), tau);
  side.grad = batch_grad(kind, side.anchors, /*skip_empty=*/true);
  double total = 0.0;
  for (const auto& av : side.anchors) {
    if (kind == LossKind::kNSCL && av.num_negatives() == 0) continue;
    total += anchor_loss(kind, av);
  }
  side.loss = total / static_cast<double>(batch.size());
  return side;
}

// Blocks of both sides are in anchor order; NSCL blocks may be missing for
// anchors without negatives.
double gradient_gap(const BatchGradient& cl, const BatchGradient& nscl) {
  double sq = 0.0;
  std::size_t j = 0;
  for (const auto& block : cl.blocks) {
    const AnchorGradient* other = nullptr;
    if (j < nscl.blocks.size() && nscl.blocks[j].anchor == block.anchor) other = &nscl.blocks[j++];
    for (std::size_t k = 0; k < block.values.size(); ++k) {
      const double d = block.values[k] - (other ? other->values[k] : 0.0);
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

}  // namespace

double per_step_gap(const SimState& state_cl, const SimState& state_nscl,
                    const BatchDraw& batch, double tau) {
  const auto slots = view_slots(batch);
  const auto cl = evaluate_side(LossKind::kCL, state_cl, batch, slots, tau);
  const auto nscl = evaluate_side(LossKind::kNSCL, state_nscl, batch, slots, tau);
  return gradient_gap(cl.grad, nscl.grad);
}

int CoupledTrace::total_clip_events() const {
  int total = 0;
  for (const auto& s : steps) total += s.clip_events;
  return total;
}

CoupledTrace run_coupled(const Dataset& data, const AugmentationKernel& kernel,
                         const CoupledSimConfig& config) {
  if (config.batch_size < 2) throw std::invalid_argument("run_coupled: B must be >= 2");
  const auto etas = config.schedule.etas();
  const int horizon = config.schedule.total_steps;
  const AugmentationKernel run_kernel{kernel.noise_scale, config.master_seed};

  CoupledTrace trace;
  trace.initial = init_sim_state(data, run_kernel);
  SimState cl = trace.initial;
  SimState nscl = trace.initial;

  double epsilon = 0.0;
  if (horizon > 0) epsilon = bounds::epsilon_B_delta(config.batch_size, horizon, config.delta);

  trace.steps.reserve(static_cast<std::size_t>(horizon) + 1);
  for (int t = 0; t <= horizon; ++t) {
    const auto batch = draw_batch(data, config.batch_size, t, config.master_seed);
    const auto slots = view_slots(batch);
    const auto side_cl = evaluate_side(LossKind::kCL, cl, batch, slots, config.tau);
    const auto side_nscl = evaluate_side(LossKind::kNSCL, nscl, batch, slots, config.tau);

    CoupledStep row;
    row.t = t;
    row.eta = t < horizon ? etas[t] : 0.0;
    row.drift = metrics::frob_drift(cl.entries, nscl.entries);
    row.loss_cl = side_cl.loss;
    row.loss_nscl = side_nscl.loss;
    row.grad_gap = gradient_gap(side_cl.grad, side_nscl.grad);
    row.empty_neg_events = side_nscl.grad.skipped_anchors;
    if (t < horizon) {
      row.composition_ok = composition_event_holds(batch, data.num_classes, epsilon);
      trace.composition_all = trace.composition_all && row.composition_ok;
      row.clip_events = surrogate_step(cl, side_cl.grad, slots, row.eta).clip_events;
      row.clip_events += surrogate_step(nscl, side_nscl.grad, slots, row.eta).clip_events;
    }
    trace.steps.push_back(row);
  }
  trace.final_cl = std::move(cl);
  trace.final_nscl = std::move(nscl);
  return trace;
}

void write_trace_csv(const CoupledTrace& trace, std::ostream& out) {
  out << "t,eta_t,D_t,loss_cl,loss_nscl,grad_gap,clip_events,empty_neg_events\n";
  for (const auto& s : trace.steps) {
    out << s.t << ',' << fmt_double(s.eta) << ',' << fmt_double(s.drift) << ','
        << fmt_double(s.loss_cl) << ',' << fmt_double(s.loss_nscl) << ','
        << fmt_double(s.grad_gap) << ',' << s.clip_events << ',' << s.empty_neg_events << '\n';
  }
}

void write_trace_csv(const CoupledTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_trace_csv(trace, out);
}

}  // namespace clalign
