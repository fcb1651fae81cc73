#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clalign/datagen.hpp"
#include "clalign/schedule.hpp"
#include "clalign/sim_core.hpp"

namespace clalign {

enum class Activation { kTanh, kIdentity };

enum class Objective { kCL, kNSCL, kSCL, kCE, kDCL };

const char* to_string(Objective objective);
Objective parse_objective(const std::string& name);

struct Layer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
  Activation activation = Activation::kIdentity;
};

/// Encoder layers followed by l2 normalization. `head` is the linear
/// classification head used only by the CE objective.
struct EncoderParams {
  std::vector<Layer> layers;
  std::optional<Layer> head;

  int input_dim() const { return static_cast<int>(layers.front().weight.cols()); }
  int output_dim() const { return static_cast<int>(layers.back().weight.rows()); }
  Eigen::Index num_params(bool include_head = true) const;
  Eigen::VectorXd flatten(bool include_head = true) const;
  void assign(const Eigen::VectorXd& flat, bool include_head = true);
  bool is_finite() const;
  EncoderParams zeros_like() const;
  /// this += a * other (shapes must match).
  void axpy(double a, const EncoderParams& other);
};

/// m -> h (tanh) -> d (identity), weights N(0, 1/fan_in), zero biases.
EncoderParams init_encoder(int input_dim, int hidden_dim, int output_dim, std::uint64_t seed);
/// Single identity-activation layer with the given weight and optional bias.
EncoderParams linear_encoder(const Eigen::MatrixXd& weight,
                             const Eigen::VectorXd& bias = Eigen::VectorXd());
/// Adds a zero-bias C x d head with N(0, 1/d) weights.
void attach_head(EncoderParams& params, int num_classes, std::uint64_t seed);

Eigen::VectorXd forward(const EncoderParams& params, const Eigen::VectorXd& x);
/// Rows of `inputs` mapped to unit embeddings. With `layer >= 0` returns the
/// (unnormalized) activations after that layer instead.
Eigen::MatrixXd embed(const EncoderParams& params, const Eigen::MatrixXd& inputs, int layer = -1);

/// 2B augmented views (row 2s+v = view v of batch position s) plus labels per position.
struct EncoderBatch {
  Eigen::MatrixXd views;
  std::vector<int> labels;
  int size() const { return static_cast<int>(labels.size()); }
};

EncoderBatch make_encoder_batch(const Dataset& data, const AugmentationKernel& kernel,
                                const BatchDraw& batch);

/// SupCon L_out on one anchor: positives are all same-class keys.
double scl_anchor_loss(const AnchorView& av);
std::vector<double> scl_anchor_grad(const AnchorView& av);
/// Decoupled loss: the positive is removed from the denominator.
double dcl_anchor_loss(const AnchorView& av);
std::vector<double> dcl_anchor_grad(const AnchorView& av);

struct LossGrad {
  double loss = 0.0;
  EncoderParams grad;
  int skipped_anchors = 0;
};

/// Batch loss and exact parameter gradient. Contrastive objectives average over
/// the B view-1 anchors; CE averages over all 2B views and needs a head.
LossGrad loss_and_grad(Objective objective, const EncoderParams& params,
                       const EncoderBatch& batch, double tau);

/// Directed similarity-space gradient (2B x 2B) of a contrastive objective.
Eigen::MatrixXd similarity_gradient(Objective objective, std::span<const int> labels,
                                    const Eigen::MatrixXd& view_sim, double tau,
                                    double* loss = nullptr, int* skipped = nullptr);

/// grad_w <X, Sigma(w)> where Sigma(w) is the cosine Gram of the embedded inputs.
EncoderParams similarity_vjp(const EncoderParams& params, const Eigen::MatrixXd& inputs,
                             const Eigen::MatrixXd& weights);
/// Directional derivative of Sigma(w) along `direction`.
Eigen::MatrixXd similarity_jvp(const EncoderParams& params, const Eigen::MatrixXd& inputs,
                               const EncoderParams& direction);
/// grad_w cos(f_w(u), f_w(v)); rejects u == v.
EncoderParams sim_param_gradient(const EncoderParams& params, const Eigen::VectorXd& u,
                                  const Eigen::VectorXd& v);

/// Global parameter distance over encoder layers (head excluded).
double weight_distance(const EncoderParams& a, const EncoderParams& b);
/// sum_l ||A_l - B_l||_F / (0.5 (||A_l||_F + ||B_l||_F)); weight and bias form one block.
double relative_layer_gap(const EncoderParams& a, const EncoderParams& b);

struct SmoothnessOptions {
  int pairs = 100;
  double radius = 0.05;
  int batches = 2;
  int batch_size = 8;
  double tau = 0.5;
  Objective objective = Objective::kCL;
  std::uint64_t seed = 0;
};

/// Empirical lower estimates of the smoothness constant beta and the pairwise
/// similarity-gradient bound G over a ball around `center`.
struct SmoothnessEstimate {
  double beta = 0.0;
  double g = 0.0;
  int pairs = 0;
  std::string note;
};

SmoothnessEstimate estimate_smoothness_constants(const EncoderParams& center, const Dataset& data,
                                                 const AugmentationKernel& kernel,
                                                 const SmoothnessOptions& options);

/// Largest ||grad_w sim|| over all distinct directed view pairs of the batch.
double max_pair_gradient_norm(const EncoderParams& params, const EncoderBatch& batch);

struct ProbeSet {
  Eigen::MatrixXd points;
  std::vector<int> labels;
};

/// Held-out points from the dataset's class means, same noise law as training.
ProbeSet make_probe_set(const Dataset& data, int size, double class_separation,
                        std::uint64_t seed);

struct CoupledEncoderConfig {
  std::vector<Objective> objectives{Objective::kCL, Objective::kNSCL};
  int batch_size = 32;
  ScheduleSpec schedule;
  double tau = 0.5;
  std::uint64_t master_seed = 0;
  int hidden_dim = 32;
  int output_dim = 16;
  int steps_per_epoch = 0;  // 0 -> ceil(N / B)
  int metric_layer = -1;    // -1 final normalized output, else hidden layer index
};

struct EncoderRecord {
  int epoch = 0;
  int step = 0;
  Objective objective = Objective::kCL;
  double e_t = 0.0;
  double relative_gap = 0.0;
  double cka = 1.0;
  double rsa = 1.0;
  double loss = 0.0;
};

struct CoupledEncoderTrace {
  std::vector<EncoderRecord> records;
  std::vector<Objective> objectives;
  std::vector<EncoderParams> initial;
  std::vector<EncoderParams> final_params;

  /// Records of one objective in epoch order.
  std::vector<EncoderRecord> series(Objective objective) const;
};

CoupledEncoderTrace run_coupled_encoders(const Dataset& data, const AugmentationKernel& kernel,
                                         const Eigen::MatrixXd& probe,
                                         const CoupledEncoderConfig& config);

void write_encoder_trace_csv(const CoupledEncoderTrace& trace, std::ostream& out);

void save_checkpoint(const EncoderParams& params, const std::filesystem::path& path);
EncoderParams load_checkpoint(const std::filesystem::path& path);

}  // namespace clalign
