#pragma once

#include <span>
#include <string>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace clalign {

enum class LossKind { kCL, kNSCL };

const char* to_string(LossKind kind);

/// Raised when an anchor's NSCL denominator has no negatives.
class PositiveOnlyBatch : public std::runtime_error {
 public:
  explicit PositiveOnlyBatch(int anchor)
      : std::runtime_error("anchor " + std::to_string(anchor) + " has no negatives"),
        anchor_(anchor) {}
  int anchor() const { return anchor_; }

 private:
  int anchor_;
};

/// One anchor's view of the batch. Keys are view indices (2s = first view of
/// batch position s, 2s+1 = second view); `logits[k]` is the similarity
/// between the anchor and `keys[k]`, and `positive` indexes the anchor's own
/// augmented view within `keys`.
struct AnchorView {
  int anchor = 0;
  int positive = 0;
  std::vector<int> keys;
  std::vector<double> logits;
  std::vector<char> same_class;
  double tau = 1.0;

  int size() const { return static_cast<int>(keys.size()); }
  int num_negatives() const;
};

/// CL and NSCL softmax distributions over an anchor's denominator. `q` is zero
/// on same-class keys. The partition sums are unnormalized: Z_S = sum exp(s/tau).
struct SoftmaxPair {
  std::vector<double> p;
  std::vector<double> q;
  double alpha = 0.0;
  double z_pos = 0.0;
  double z_neg = 0.0;
};

struct ReweightingGap {
  double l1 = 0.0;
  double l2 = 0.0;
};

/// Per-anchor gradient placed on the anchor's key coordinates.
struct AnchorGradient {
  int anchor = 0;
  std::vector<int> keys;
  std::vector<double> values;
};

/// Batch gradient G = (1/B) sum_i g_i stored block-wise; blocks of distinct
/// anchors occupy disjoint (anchor, key) coordinates.
struct BatchGradient {
  int batch_size = 0;
  std::vector<AnchorGradient> blocks;  // already scaled by 1/B
  int skipped_anchors = 0;

  double frobenius_norm() const;
  /// Directed (anchor, key) matrix over `num_views` view indices.
  Eigen::MatrixXd to_dense(int num_views) const;
};

std::vector<double> softmax_tau(std::span<const double> logits, double tau);

double log_sum_exp_tau(std::span<const double> logits, double tau);

double cl_anchor_loss(const AnchorView& av);

/// May be negative: the positive is not part of the negatives-only denominator.
double nscl_anchor_loss(const AnchorView& av);

double anchor_loss(LossKind kind, const AnchorView& av);

SoftmaxPair softmax_pair(const AnchorView& av);

/// CL: (1/tau)(p - e_pos) on D_i. NSCL: (1/tau)(q - e_pos), with q supported on negatives.
std::vector<double> anchor_grad(LossKind kind, const AnchorView& av);

double batch_loss(LossKind kind, std::span<const AnchorView> anchors);

/// With `skip_empty`, NSCL anchors without negatives contribute zero gradient
/// and are counted in `skipped_anchors`; otherwise they raise PositiveOnlyBatch.
BatchGradient batch_grad(LossKind kind, std::span<const AnchorView> anchors,
                         bool skip_empty = false);

ReweightingGap reweighting_gap(const SoftmaxPair& sp);

/// Diag(p) - p p^T.
Eigen::MatrixXd softmax_jacobian(std::span<const double> p);

/// One anchor per batch position s (its first view 2s) with positive 2s+1 and
/// denominator all other 2B-1 views. `view_sim` is the 2B x 2B similarity
/// matrix of batch views; `labels` holds one class id per batch position.
std::vector<AnchorView> make_anchor_views(std::span<const int> labels,
                                          const Eigen::MatrixXd& view_sim, double tau);

}  // namespace clalign
