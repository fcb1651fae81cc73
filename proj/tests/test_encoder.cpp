#include <cmath>
#include <filesystem>
#include <sstream>

#include <gtest/gtest.h>

#include "clalign/encoder.hpp"
#include "clalign/metrics.hpp"
#include "clalign/rng.hpp"
#include "oracles.hpp"

using namespace clalign;

namespace {

Eigen::VectorXd random_unit(Rng& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int k = 0; k < dim; ++k) v[k] = normal(rng);
  return v.normalized();
}

EncoderBatch random_batch(std::uint64_t seed, int batch_size, int dim, int classes) {
  auto rng = make_rng(seed, Stream::kTrial, 1);
  EncoderBatch batch;
  batch.views.resize(2 * batch_size, dim);
  std::uniform_int_distribution<int> label(0, classes - 1);
  for (int s = 0; s < batch_size; ++s) {
    batch.labels.push_back(label(rng));
    batch.views.row(2 * s) = random_unit(rng, dim).transpose();
    batch.views.row(2 * s + 1) = random_unit(rng, dim).transpose();
  }
  return batch;
}

}  // namespace

TEST(Forward, ConstantNetworkReturnsNormalizedBias) {
  auto params = init_encoder(5, 4, 3, 11);
  params.layers[0].weight.setZero();
  params.layers[1].bias << 3.0, -4.0, 0.0;
  Eigen::VectorXd x = Eigen::VectorXd::Ones(5).normalized();
  const auto z = forward(params, x);
  EXPECT_NEAR(z[0], 0.6, 1e-15);
  EXPECT_NEAR(z[1], -0.8, 1e-15);
  EXPECT_NEAR(z[2], 0.0, 1e-15);
}

TEST(Forward, IdentityLayerReturnsInput) {
  const auto params = linear_encoder(Eigen::MatrixXd::Identity(4, 4));
  Eigen::VectorXd x(4);
  x << 0.5, 0.5, 0.5, 0.5;
  EXPECT_LT((forward(params, x) - x).norm(), 1e-15);
}

TEST(Forward, OutputIsUnitNorm) {
  const auto params = init_encoder(6, 8, 5, 3);
  auto rng = make_rng(9, Stream::kTrial);
  for (int k = 0; k < 50; ++k) {
    EXPECT_NEAR(forward(params, random_unit(rng, 6)).norm(), 1.0, 1e-9);
  }
}

class ObjectiveGradient : public ::testing::TestWithParam<Objective> {};

TEST_P(ObjectiveGradient, MatchesCentralDifferences) {
  const Objective objective = GetParam();
  const double taus[] = {0.5, 1.0, 0.3};
  for (int instance = 0; instance < 3; ++instance) {
    auto params = init_encoder(5, 6, 4, 100 + instance);
    params.layers[0].bias.setConstant(0.1);
    params.layers[1].bias.setConstant(-0.05);
    if (objective == Objective::kCE) attach_head(params, 3, 100 + instance);
    const auto batch = random_batch(200 + instance, 4, 5, 3);
    const double tau = taus[instance];
    const auto lg = loss_and_grad(objective, params, batch, tau);
    auto f = [&](const Eigen::VectorXd& flat) {
      EncoderParams p = params;
      p.assign(flat);
      return loss_and_grad(objective, p, batch, tau).loss;
    };
    const auto fd = oracle::central_difference(f, params.flatten());
    EXPECT_LT(oracle::relative_error(lg.grad.flatten(), fd), 1e-5)
        << to_string(objective) << " instance " << instance;
  }
}

INSTANTIATE_TEST_SUITE_P(AllObjectives, ObjectiveGradient,
                         ::testing::Values(Objective::kCL, Objective::kNSCL, Objective::kSCL,
                                           Objective::kCE, Objective::kDCL),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(LossAndGrad, ClLossEqualsSimilaritySpaceBatchLoss) {
  const auto params = init_encoder(5, 6, 4, 1);
  const auto batch = random_batch(2, 6, 5, 3);
  const Eigen::MatrixXd z = embed(params, batch.views);
  const auto anchors = make_anchor_views(batch.labels, z * z.transpose(), 0.5);
  EXPECT_NEAR(loss_and_grad(Objective::kCL, params, batch, 0.5).loss,
              batch_loss(LossKind::kCL, anchors), 1e-13);
}

TEST(LossAndGrad, SclWithDistinctLabelsIsOnePositiveObjective) {
  const auto params = init_encoder(5, 6, 4, 3);
  auto batch = random_batch(4, 4, 5, 4);
  batch.labels = {0, 1, 2, 3};
  const Eigen::MatrixXd z = embed(params, batch.views);
  const Eigen::MatrixXd s = z * z.transpose();
  const double tau = 0.7;
  // Brute force: SupCon L_out with P(i) = {i'} and -log p_{i'} over all other views.
  double scl = 0.0, cl = 0.0;
  for (int i = 0; i < 4; ++i) {
    const int a = 2 * i;
    double denom = 0.0;
    for (int k = 0; k < 8; ++k) {
      if (k != a) denom += std::exp(s(a, k) / tau);
    }
    scl += -std::log(std::exp(s(a, a + 1) / tau) / denom);
    cl += -s(a, a + 1) / tau + std::log(denom);
  }
  EXPECT_NEAR(loss_and_grad(Objective::kSCL, params, batch, tau).loss, scl / 4, 1e-12);
  EXPECT_NEAR(loss_and_grad(Objective::kCL, params, batch, tau).loss, cl / 4, 1e-12);
}

TEST(LossAndGrad, DclDropsPositiveFromDenominator) {
  AnchorView av;
  av.tau = 1.0;
  av.positive = 0;
  av.keys = {1, 2, 3};
  av.logits = {1.0, 0.0, 0.0};
  av.same_class = {1, 0, 0};
  EXPECT_NEAR(dcl_anchor_loss(av), -1.0 + std::log(2.0), 1e-15);
}

TEST(LossAndGrad, CeWithoutHeadIsRejected) {
  const auto params = init_encoder(5, 6, 4, 1);
  EXPECT_THROW(loss_and_grad(Objective::kCE, params, random_batch(1, 4, 5, 2), 0.5),
               std::invalid_argument);
}

TEST(SimilarityMaps, JvpAndVjpAreAdjoint) {
  const auto params = init_encoder(5, 6, 4, 21);
  const auto batch = random_batch(22, 5, 5, 3);
  auto rng = make_rng(23, Stream::kTrial);
  std::normal_distribution<double> normal(0.0, 1.0);
  EncoderParams dir = params.zeros_like();
  Eigen::VectorXd flat(params.num_params());
  for (Eigen::Index k = 0; k < flat.size(); ++k) flat[k] = normal(rng);
  dir.assign(flat);
  Eigen::MatrixXd x(10, 10);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);

  const Eigen::MatrixXd jv = similarity_jvp(params, batch.views, dir);
  const double lhs = (x.array() * jv.array()).sum();
  const double rhs = similarity_vjp(params, batch.views, x).flatten().dot(flat);
  EXPECT_NEAR(lhs, rhs, 1e-10 * std::max(1.0, std::abs(lhs)));

  // Directional finite difference of the cosine Gram.
  const double h = 1e-6;
  EncoderParams up = params, down = params;
  up.axpy(h, dir);
  down.axpy(-h, dir);
  const Eigen::MatrixXd fd = (metrics::cosine_gram(embed(up, batch.views)) -
                              metrics::cosine_gram(embed(down, batch.views))) /
                             (2.0 * h);
  EXPECT_LT((fd - jv).norm(), 1e-7 * std::max(1.0, jv.norm()));
}

TEST(SimParamGradient, RejectsDuplicatePoints) {
  const auto params = init_encoder(3, 4, 3, 0);
  Eigen::VectorXd u = Eigen::VectorXd::Ones(3).normalized();
  EXPECT_THROW(sim_param_gradient(params, u, u), std::invalid_argument);
}

TEST(SimParamGradient, LinearIdentityMatchesHandDerivedNorm) {
  // At W = I, b = 0 and unit u, v with c = cos(u, v):
  // grad_W = (v - c u) u^T + (u - c v) v^T with norm sqrt(2) (1 - c^2),
  // grad_b = (1 - c)(u + v) with squared norm 2 (1 - c)^2 (1 + c).
  const auto params = linear_encoder(Eigen::MatrixXd::Identity(6, 6));
  auto rng = make_rng(31, Stream::kTrial);
  for (int k = 0; k < 100; ++k) {
    const auto u = random_unit(rng, 6);
    const auto v = random_unit(rng, 6);
    const double c = oracle::cosine(u, v);
    const double expected =
        std::sqrt(2.0 * std::pow(1.0 - c * c, 2) + 2.0 * std::pow(1.0 - c, 2) * (1.0 + c));
    EXPECT_NEAR(sim_param_gradient(params, u, v).flatten().norm(), expected, 1e-12);
  }
}

TEST(Smoothness, LinearEncoderEstimatesRespectAnalyticBounds) {
  const int dim = 6;
  const auto data = make_dataset(3, 10, dim, 3.0, 5);
  const AugmentationKernel kernel{0.2, 5};
  const auto center = linear_encoder(Eigen::MatrixXd::Identity(dim, dim));

  SmoothnessOptions at_center;
  at_center.radius = 0.0;
  at_center.pairs = 200;
  const auto g_only = estimate_smoothness_constants(center, data, kernel, at_center);
  // sup_c of the hand-derived norm: sqrt(2) for the weight block, sqrt(64/27) for the bias.
  EXPECT_LE(g_only.g, std::sqrt(2.0 + 64.0 / 27.0) + 1e-12);
  EXPECT_GT(g_only.g, 0.0);

  SmoothnessOptions ball;
  ball.radius = 0.05;
  ball.pairs = 100;
  ball.batch_size = 4;
  const auto est = estimate_smoothness_constants(center, data, kernel, ball);
  // ||(E, b)|| <= r gives ||W u + b|| >= 1 - sqrt(2) r; the cosine has gradient
  // norm <= 2 sqrt(2)/rho and Hessian norm <= 32/rho^2 in (W, b), and the
  // similarity-space loss has curvature <= 1/(2 tau^2 B) and l1 gradient <= 2/tau.
  const double rho = 1.0 - std::sqrt(2.0) * ball.radius;
  const double g_bound = 2.0 * std::sqrt(2.0) / rho;
  const int b = ball.batch_size;
  const double tau = ball.tau;
  const double beta_bound =
      (2 * b - 1) * g_bound * g_bound / (2 * tau * tau) + (2.0 / tau) * 32.0 / (rho * rho);
  EXPECT_GT(est.beta, 0.0);
  EXPECT_LE(est.beta, beta_bound);
  EXPECT_LE(est.g, g_bound);
  EXPECT_EQ(est.pairs, 100);
  EXPECT_EQ(est.note, "estimated lower bound of a supremum");
}

TEST(WeightGap, RelativeGapZeroIffIdentical) {
  const auto a = init_encoder(4, 5, 3, 1);
  EXPECT_EQ(relative_layer_gap(a, a), 0.0);
  EXPECT_EQ(weight_distance(a, a), 0.0);
  auto b = a;
  b.layers[1].bias[0] += 0.1;
  EXPECT_GT(relative_layer_gap(a, b), 0.0);
  EXPECT_NEAR(weight_distance(a, b), 0.1, 1e-15);
}

TEST(CoupledEncoders, EpochZeroIsIdentical) {
  const auto data = make_dataset(4, 8, 6, 3.0, 2);
  const auto probe = make_probe_set(data, 40, 3.0, 2);
  CoupledEncoderConfig config;
  config.objectives = {Objective::kCL, Objective::kNSCL, Objective::kSCL, Objective::kCE,
                       Objective::kDCL};
  config.batch_size = 8;
  config.schedule.total_steps = 12;
  config.schedule.base_eta = 0.2;
  config.hidden_dim = 8;
  config.output_dim = 4;
  config.master_seed = 17;
  const auto trace = run_coupled_encoders(data, {0.1, 0}, probe.points, config);
  for (const auto& r : trace.records) {
    if (r.step != 0) continue;
    EXPECT_EQ(r.e_t, 0.0);
    EXPECT_EQ(r.relative_gap, 0.0);
    EXPECT_NEAR(r.cka, 1.0, 1e-12);
    EXPECT_NEAR(r.rsa, 1.0, 1e-12);
  }
  for (auto objective : {Objective::kNSCL, Objective::kSCL, Objective::kCE}) {
    EXPECT_GT(trace.series(objective).back().e_t, 0.0);
  }
  std::ostringstream a, b;
  write_encoder_trace_csv(trace, a);
  write_encoder_trace_csv(run_coupled_encoders(data, {0.1, 0}, probe.points, config), b);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Checkpoint, RoundTripIsExact) {
  auto params = init_encoder(4, 5, 3, 8);
  attach_head(params, 3, 8);
  const auto path = std::filesystem::temp_directory_path() / "clalign_ckpt_test.bin";
  save_checkpoint(params, path);
  const auto loaded = load_checkpoint(path);
  std::filesystem::remove(path);
  EXPECT_EQ(loaded.flatten(), params.flatten());
  ASSERT_TRUE(loaded.head.has_value());
  EXPECT_EQ(loaded.layers[0].activation, Activation::kTanh);
}
