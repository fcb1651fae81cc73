#include "clalign/sim_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace clalign {
namespace {

void require_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw std::invalid_argument("temperature must be positive and finite");
  }
}

}  // namespace

const char* to_string(LossKind kind) { return kind == LossKind::kCL ? "CL" : "NSCL"; }

int AnchorView::num_negatives() const {
  return static_cast<int>(std::count(same_class.begin(), same_class.end(), 0));
}

std::vector<double> softmax_tau(std::span<const double> logits, double tau) {
  require_tau(tau);
  if (logits.empty()) throw std::invalid_argument("softmax of an empty logit vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - top) / tau);
    total += p[k];
  }
  for (double& v : p) v /= total;
  return p;
}

double log_sum_exp_tau(std::span<const double> logits, double tau) {
  require_tau(tau);
  if (logits.empty()) throw std::invalid_argument("log-sum-exp of an empty logit vector");
  const double top = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double s : logits) total += std::exp((s - top) / tau);
  return top / tau + std::log(total);
}

double cl_anchor_loss(const AnchorView& av) {
  require_tau(av.tau);
  // logits shifted by the positive; log1p keeps small losses accurate
  const double pos = av.logits[av.positive];
  double top = 0.0;
  for (double s : av.logits) top = std::max(top, (s - pos) / av.tau);
  double rest = 0.0;
  for (int k = 0; k < av.size(); ++k) {
    if (k != av.positive) rest += std::exp((av.logits[k] - pos) / av.tau - top);
  }
  if (top == 0.0) return std::log1p(rest);
  return top + std::log(rest + std::exp(-top));
}

double nscl_anchor_loss(const AnchorView& av) {
  std::vector<double> negatives;
  negatives.reserve(av.logits.size());
  for (int k = 0; k < av.size(); ++k) {
    if (!av.same_class[k]) negatives.push_back(av.logits[k]);
  }
  if (negatives.empty()) throw PositiveOnlyBatch(av.anchor);
  return -av.logits[av.positive] / av.tau + log_sum_exp_tau(negatives, av.tau);
}

double anchor_loss(LossKind kind, const AnchorView& av) {
  return kind == LossKind::kCL ? cl_anchor_loss(av) : nscl_anchor_loss(av);
}

SoftmaxPair softmax_pair(const AnchorView& av) {
  SoftmaxPair sp;
  sp.p = softmax_tau(av.logits, av.tau);
  sp.q.assign(sp.p.size(), 0.0);
  for (int k = 0; k < av.size(); ++k) {
    const double e = std::exp(av.logits[k] / av.tau);
    if (av.same_class[k]) {
      sp.alpha += sp.p[k];
      sp.z_pos += e;
    } else {
      sp.z_neg += e;
    }
  }
  if (av.num_negatives() > 0) {
    // Renormalize directly from logits rather than dividing by (1 - alpha):
    // alpha can round to 1 for extreme states.
    std::vector<double> neg_logits;
    for (int k = 0; k < av.size(); ++k) {
      if (!av.same_class[k]) neg_logits.push_back(av.logits[k]);
    }
    const auto q_neg = softmax_tau(neg_logits, av.tau);
    std::size_t j = 0;
    for (int k = 0; k < av.size(); ++k) {
      if (!av.same_class[k]) sp.q[k] = q_neg[j++];
    }
  }
  return sp;
}

std::vector<double> anchor_grad(LossKind kind, const AnchorView& av) {
  std::vector<double> g;
  if (kind == LossKind::kCL) {
    g = softmax_tau(av.logits, av.tau);
  } else {
    if (av.num_negatives() == 0) throw PositiveOnlyBatch(av.anchor);
    g = softmax_pair(av).q;
  }
  g[av.positive] -= 1.0;
  for (double& v : g) v /= av.tau;
  return g;
}

double batch_loss(LossKind kind, std::span<const AnchorView> anchors) {
  if (anchors.empty()) throw std::invalid_argument("batch_loss: no anchors");
  double total = 0.0;
  for (const auto& av : anchors) total += anchor_loss(kind, av);
  return total / static_cast<double>(anchors.size());
}

BatchGradient batch_grad(LossKind kind, std::span<const AnchorView> anchors, bool skip_empty) {
  if (anchors.empty()) throw std::invalid_argument("batch_grad: no anchors");
  BatchGradient grad;
  grad.batch_size = static_cast<int>(anchors.size());
  const double scale = 1.0 / grad.batch_size;
  grad.blocks.reserve(anchors.size());
  for (const auto& av : anchors) {
    if (kind == LossKind::kNSCL && av.num_negatives() == 0) {
      if (!skip_empty) throw PositiveOnlyBatch(av.anchor);
      ++grad.skipped_anchors;
      continue;
    }
    AnchorGradient block;
    block.anchor = av.anchor;
    block.keys = av.keys;
    block.values = anchor_grad(kind, av);
    for (double& v : block.values) v *= scale;
    grad.blocks.push_back(std::move(block));
  }
  return grad;
}

double BatchGradient::frobenius_norm() const {
  double sq = 0.0;
  for (const auto& block : blocks) {
    for (double v : block.values) sq += v * v;
  }
  return std::sqrt(sq);
}

Eigen::MatrixXd BatchGradient::to_dense(int num_views) const {
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(num_views, num_views);
  for (const auto& block : blocks) {
    for (std::size_t k = 0; k < block.keys.size(); ++k) {
      dense(block.anchor, block.keys[k]) += block.values[k];
    }
  }
  return dense;
}

ReweightingGap reweighting_gap(const SoftmaxPair& sp) {
  ReweightingGap gap;
  double sq = 0.0;
  for (std::size_t k = 0; k < sp.p.size(); ++k) {
    const double d = sp.p[k] - sp.q[k];
    gap.l1 += std::abs(d);
    sq += d * d;
  }
  gap.l2 = std::sqrt(sq);
  return gap;
}

Eigen::MatrixXd softmax_jacobian(std::span<const double> p) {
  const auto n = static_cast<Eigen::Index>(p.size());
  Eigen::Map<const Eigen::VectorXd> pv(p.data(), n);
  Eigen::MatrixXd j = -pv * pv.transpose();
  j.diagonal() += pv;
  return j;
}

std::vector<AnchorView> make_anchor_views(std::span<const int> labels,
                                          const Eigen::MatrixXd& view_sim, double tau) {
  require_tau(tau);
  const int batch = static_cast<int>(labels.size());
  if (view_sim.rows() != 2 * batch || view_sim.cols() != 2 * batch) {
    throw std::invalid_argument("make_anchor_views: view_sim must be 2B x 2B");
  }
  std::vector<AnchorView> anchors(static_cast<std::size_t>(batch));
  for (int s = 0; s < batch; ++s) {
    auto& av = anchors[s];
    av.anchor = 2 * s;
    av.tau = tau;
    av.keys.reserve(2 * batch - 1);
    for (int v = 0; v < 2 * batch; ++v) {
      if (v == av.anchor) continue;
      if (v == 2 * s + 1) av.positive = static_cast<int>(av.keys.size());
      av.keys.push_back(v);
      av.logits.push_back(view_sim(av.anchor, v));
      av.same_class.push_back(labels[v / 2] == labels[s] ? 1 : 0);
    }
  }
  return anchors;
}

}  // namespace clalign
