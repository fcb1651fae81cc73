#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "clalign/rng.hpp"
#include "clalign/sim_core.hpp"
#include "oracles.hpp"

using namespace clalign;

namespace {

AnchorView anchor(std::vector<double> logits, int positive, std::vector<char> same_class,
                  double tau) {
  AnchorView av;
  av.anchor = 0;
  av.positive = positive;
  av.logits = std::move(logits);
  av.same_class = std::move(same_class);
  av.keys.resize(av.logits.size());
  std::iota(av.keys.begin(), av.keys.end(), 1);
  av.tau = tau;
  return av;
}

AnchorView random_anchor(Rng& rng, int n, double tau) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> logits(n);
  std::vector<char> same(n, 0);
  for (auto& s : logits) s = u(rng);
  same[0] = 1;
  if (n > 3) same[1] = 1;
  return anchor(logits, 0, same, tau);
}

}  // namespace

TEST(Softmax, UniformLogits) {
  const std::vector<double> s{0, 0, 0, 0};
  for (double p : softmax_tau(s, 1.0)) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Softmax, TwoLogits) {
  const std::vector<double> s{1, -1};
  const auto p = softmax_tau(s, 1.0);
  EXPECT_NEAR(p[0], 0.8807970779778823, 1e-15);
  EXPECT_NEAR(p[1], 0.11920292202211755, 1e-15);
}

TEST(Softmax, ShiftInvariant) {
  const std::vector<double> s{0.3, -0.2, 0.9};
  const std::vector<double> shifted{700.3, 699.8, 700.9};
  const auto a = softmax_tau(s, 0.5);
  const auto b = softmax_tau(shifted, 0.5);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(Softmax, RejectsBadInput) {
  const std::vector<double> s{1.0};
  EXPECT_THROW(softmax_tau(s, 0.0), std::invalid_argument);
  EXPECT_THROW(softmax_tau(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST(ClLoss, EqualLogitsGiveLogK) {
  EXPECT_NEAR(cl_anchor_loss(anchor({0.2, 0.2, 0.2, 0.2, 0.2}, 1, {0, 1, 0, 0, 0}, 0.7)),
              std::log(5.0), 1e-14);
}

TEST(ClLoss, ClosedForm) {
  EXPECT_NEAR(cl_anchor_loss(anchor({1, 0, 0}, 0, {1, 0, 0}, 1.0)), 0.5514447139320511, 1e-14);
}

TEST(ClLoss, DecreasesToZeroAsTauShrinks) {
  double previous = INFINITY;
  for (double tau : {1.0, 0.5, 0.1}) {
    const double loss = cl_anchor_loss(anchor({1, -1, -1}, 0, {1, 0, 0}, tau));
    EXPECT_LT(loss, previous);
    EXPECT_NEAR(loss, std::log1p(2.0 * std::exp(-2.0 / tau)), 1e-15);
    previous = loss;
  }
}

TEST(NsclLoss, EqualPositiveAndNegativeIsZero) {
  EXPECT_NEAR(nscl_anchor_loss(anchor({0.4, 0.4}, 0, {1, 0}, 0.5)), 0.0, 1e-15);
}

TEST(NsclLoss, ClosedForm) {
  EXPECT_NEAR(nscl_anchor_loss(anchor({1, -1}, 0, {1, 0}, 1.0)), -2.0, 1e-15);
}

TEST(NsclLoss, AllPositiveThrows) {
  const auto av = anchor({1, 0.5}, 0, {1, 1}, 1.0);
  EXPECT_THROW(nscl_anchor_loss(av), PositiveOnlyBatch);
  EXPECT_THROW(anchor_grad(LossKind::kNSCL, av), PositiveOnlyBatch);
}

TEST(BatchLoss, MeanOfAnchors) {
  const auto a = anchor({1, 0, 0}, 0, {1, 0, 0}, 1.0);
  const auto b = anchor({1, -1}, 0, {1, 0}, 1.0);
  const std::vector<AnchorView> same{a, a, a};
  EXPECT_NEAR(batch_loss(LossKind::kCL, same), cl_anchor_loss(a), 1e-15);
  const std::vector<AnchorView> mixed{a, b};
  EXPECT_NEAR(batch_loss(LossKind::kCL, mixed),
              0.5 * (0.5514447139320511 + std::log1p(std::exp(-2.0))), 1e-14);
  EXPECT_THROW(batch_loss(LossKind::kCL, std::vector<AnchorView>{}), std::invalid_argument);
}

TEST(AnchorGrad, PerfectPredictionIsZero) {
  const auto g = anchor_grad(LossKind::kCL, anchor({1, -1, -1}, 0, {1, 0, 0}, 0.001));
  for (double v : g) EXPECT_NEAR(v, 0.0, 1e-300);
}

TEST(AnchorGrad, UniformSoftmax) {
  const auto g = anchor_grad(LossKind::kCL, anchor({0, 0, 0, 0}, 2, {0, 0, 1, 0}, 1.0));
  for (int k = 0; k < 4; ++k) EXPECT_NEAR(g[k], k == 2 ? -0.75 : 0.25, 1e-15);
}

TEST(AnchorGrad, NsclIsZeroOnOtherPositives) {
  const auto g = anchor_grad(LossKind::kNSCL, anchor({0.1, 0.5, -0.2, 0.3}, 0, {1, 1, 0, 0}, 0.5));
  EXPECT_NEAR(g[0], -2.0, 1e-15);
  EXPECT_EQ(g[1], 0.0);
  EXPECT_NEAR(g[2] + g[3], 2.0, 1e-14);
}

class AnchorGradFd : public ::testing::TestWithParam<LossKind> {};

TEST_P(AnchorGradFd, MatchesCentralDifferences) {
  const LossKind kind = GetParam();
  for (int seed = 0; seed < 200; ++seed) {
    auto rng = make_rng(seed, Stream::kTrial, 41);
    const int n = 2 + seed % 30;
    const double tau = std::array{0.1, 0.25, 0.5, 1.0, 2.0}[seed % 5];
    const AnchorView av = random_anchor(rng, n, tau);
    const auto g = anchor_grad(kind, av);
    Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(av.logits.data(), n);
    const auto fd = oracle::central_difference(
        [&](const Eigen::VectorXd& v) {
          AnchorView probe = av;
          probe.logits.assign(v.data(), v.data() + n);
          return anchor_loss(kind, probe);
        },
        x);
    EXPECT_LT(oracle::relative_error(Eigen::Map<const Eigen::VectorXd>(g.data(), n), fd), 1e-6)
        << "seed " << seed;
    EXPECT_LE(Eigen::Map<const Eigen::VectorXd>(g.data(), n).norm(), std::sqrt(2.0) / tau + 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Kinds, AnchorGradFd, ::testing::Values(LossKind::kCL, LossKind::kNSCL));

TEST(Reweighting, NoPositivesGivesZeroGap) {
  const auto av = anchor({0.2, -0.4, 0.7}, 0, {0, 0, 0}, 0.5);
  const auto gap = reweighting_gap(softmax_pair(av));
  EXPECT_NEAR(gap.l1, 0.0, 1e-15);
  EXPECT_NEAR(gap.l2, 0.0, 1e-15);
}

TEST(Reweighting, SymmetricPair) {
  const auto sp = softmax_pair(anchor({0.3, 0.3}, 0, {1, 0}, 1.0));
  EXPECT_NEAR(sp.alpha, 0.5, 1e-15);
  EXPECT_NEAR(reweighting_gap(sp).l1, 1.0, 1e-15);
}

TEST(Reweighting, L1IsTwiceAlphaAndBoundsL2) {
  for (int seed = 0; seed < 100; ++seed) {
    auto rng = make_rng(seed, Stream::kTrial, 42);
    const auto sp = softmax_pair(random_anchor(rng, 3 + seed % 20, 0.5));
    const auto gap = reweighting_gap(sp);
    EXPECT_NEAR(gap.l1, 2.0 * sp.alpha, 1e-12);
    EXPECT_LE(gap.l2, gap.l1 + 1e-15);
  }
}

TEST(SoftmaxJacobian, SpectralNormAtMostHalf) {
  for (int seed = 0; seed < 50; ++seed) {
    auto rng = make_rng(seed, Stream::kTrial, 43);
    const auto p = softmax_tau(random_anchor(rng, 2 + seed % 12, 0.25).logits, 0.25);
    const Eigen::MatrixXd j = softmax_jacobian(p);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(j);
    EXPECT_LE(eig.eigenvalues().cwiseAbs().maxCoeff(), 0.5 + 1e-12);
  }
}

namespace {

Eigen::MatrixXd random_view_sim(Rng& rng, int views) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd z(views, 4);
  for (int i = 0; i < views; ++i) {
    for (int k = 0; k < 4; ++k) z(i, k) = n(rng);
    z.row(i).normalize();
  }
  return z * z.transpose();
}

}  // namespace

TEST(MakeAnchorViews, DenominatorIsAllOtherViews) {
  auto rng = make_rng(1, Stream::kTrial, 44);
  const std::vector<int> labels{0, 1, 0};
  const auto avs = make_anchor_views(labels, random_view_sim(rng, 6), 0.5);
  ASSERT_EQ(avs.size(), 3u);
  for (int s = 0; s < 3; ++s) {
    EXPECT_EQ(avs[s].anchor, 2 * s);
    EXPECT_EQ(avs[s].size(), 5);
    EXPECT_EQ(avs[s].keys[avs[s].positive], 2 * s + 1);
    EXPECT_TRUE(avs[s].same_class[avs[s].positive]);
  }
  EXPECT_EQ(avs[0].num_negatives(), 2);
  EXPECT_EQ(avs[1].num_negatives(), 4);
}

TEST(BatchGrad, SingleAnchorIsScaledBlock) {
  const auto av = anchor({0.5, 0.1, -0.3}, 0, {1, 0, 0}, 0.5);
  const auto g = anchor_grad(LossKind::kCL, av);
  const auto G = batch_grad(LossKind::kCL, std::vector<AnchorView>{av});
  ASSERT_EQ(G.blocks.size(), 1u);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(G.blocks[0].values[k], g[k]);
}

TEST(BatchGrad, PythagoreanIdentityAndNormBound) {
  for (int seed = 0; seed < 100; ++seed) {
    auto rng = make_rng(seed, Stream::kTrial, 45);
    const int b = 8;
    std::vector<int> labels(b);
    for (int s = 0; s < b; ++s) labels[s] = s % 3;
    const auto avs = make_anchor_views(labels, random_view_sim(rng, 2 * b), 1.0);
    for (auto kind : {LossKind::kCL, LossKind::kNSCL}) {
      const auto G = batch_grad(kind, avs);
      double sum = 0.0;
      for (const auto& av : avs) {
        const auto g = anchor_grad(kind, av);
        for (double v : g) sum += v * v;
      }
      EXPECT_NEAR(G.frobenius_norm() * G.frobenius_norm(), sum / (b * b), 1e-14);
      EXPECT_NEAR(G.to_dense(2 * b).norm(), G.frobenius_norm(), 1e-14);
      EXPECT_LE(G.frobenius_norm(), 0.5 + 1e-12);
    }
  }
}

TEST(BatchGrad, SkipEmptyCountsAnchors) {
  auto rng = make_rng(3, Stream::kTrial, 46);
  const std::vector<int> labels{1, 1, 1};
  const auto avs = make_anchor_views(labels, random_view_sim(rng, 6), 0.5);
  EXPECT_THROW(batch_grad(LossKind::kNSCL, avs), PositiveOnlyBatch);
  const auto G = batch_grad(LossKind::kNSCL, avs, true);
  EXPECT_EQ(G.skipped_anchors, 3);
  EXPECT_EQ(G.frobenius_norm(), 0.0);
}
