#include <cmath>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "clalign/datagen.hpp"
#include "clalign/schedule.hpp"
#include "oracles.hpp"

using namespace clalign;

TEST(Dataset, NoiselessTwoPoints) {
  const auto d = make_dataset(2, 1, 2, std::numeric_limits<double>::infinity(), 3);
  ASSERT_EQ(d.size(), 2);
  EXPECT_EQ(d.labels, (std::vector<int>{0, 1}));
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(d.points.row(i).norm(), 1.0, 1e-15);
    EXPECT_LT((d.points.row(i) - d.class_means.row(i)).norm(), 1e-15);
  }
}

TEST(Dataset, Balanced) {
  const auto d = make_dataset(10, 50, 16, 4.0, 7);
  ASSERT_EQ(d.size(), 500);
  std::vector<int> counts(10, 0);
  for (int y : d.labels) ++counts[y];
  for (int c : counts) EXPECT_EQ(c, 50);
  for (int i = 0; i < d.size(); ++i) EXPECT_NEAR(d.points.row(i).norm(), 1.0, 1e-12);
}

TEST(Dataset, EmpiricalMeansNearGeneratorMeans) {
  const auto d = make_dataset(3, 4, 8, 2.0, 1);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(8);
    for (int i = 0; i < d.size(); ++i) {
      if (d.labels[i] == c) mean += d.points.row(i).transpose();
    }
    const double cos = oracle::cosine(mean, d.class_means.row(c).transpose());
    EXPECT_GT(cos, std::cos(30.0 * M_PI / 180.0));
  }
}

TEST(Dataset, RejectsBadShapes) {
  EXPECT_THROW(make_dataset(1, 5, 4, 1.0, 0), DataError);
  EXPECT_THROW(make_dataset(3, 0, 4, 1.0, 0), DataError);
  EXPECT_THROW(make_dataset(3, 5, 1, 1.0, 0), DataError);
}

TEST(Dataset, SameSeedSameData) {
  const auto a = make_dataset(4, 6, 5, 1.5, 99);
  const auto b = make_dataset(4, 6, 5, 1.5, 99);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.labels, b.labels);
}

TEST(Dataset, FileRoundTrips) {
  const auto d = make_dataset(3, 5, 4, 2.0, 12);
  const auto dir = std::filesystem::temp_directory_path() / "clalign_test_datagen";
  std::filesystem::create_directories(dir);
  save_dataset_csv(d, dir / "d.csv");
  save_dataset_binary(d, dir / "d.bin");
  for (const auto& back : {load_dataset_csv(dir / "d.csv"), load_dataset_binary(dir / "d.bin")}) {
    EXPECT_EQ(back.points, d.points);
    EXPECT_EQ(back.labels, d.labels);
    EXPECT_EQ(back.num_classes, 3);
  }
  std::filesystem::remove_all(dir);
}

TEST(Augmentation, ZeroNoiseIsIdentity) {
  const auto d = make_dataset(2, 3, 6, 2.0, 5);
  const Eigen::VectorXd x = d.points.row(0).transpose();
  EXPECT_LT((apply_augmentation(x, {0.0, 1}, {3, 0, 1}) - x).norm(), 1e-15);
}

TEST(Augmentation, DeterministicPerKey) {
  const auto d = make_dataset(2, 3, 6, 2.0, 5);
  const Eigen::VectorXd x = d.points.row(1).transpose();
  const AugmentationKernel k{0.3, 17};
  EXPECT_EQ(apply_augmentation(x, k, {4, 1, 0}), apply_augmentation(x, k, {4, 1, 0}));
  EXPECT_NE(apply_augmentation(x, k, {4, 1, 0}), apply_augmentation(x, k, {4, 1, 1}));
}

TEST(Augmentation, SmallNoiseKeepsHighCosine) {
  const auto d = make_dataset(2, 1, 16, 2.0, 8);
  const Eigen::VectorXd x = d.points.row(0).transpose();
  const AugmentationKernel k{0.1, 21};
  for (int key = 0; key < 1000; ++key) {
    const auto y = apply_augmentation(x, k, {key, 0, 0});
    EXPECT_NEAR(y.norm(), 1.0, 1e-12);
    const double cos = x.dot(y);
    EXPECT_GT(cos, 0.9);
    EXPECT_LT(cos, 1.0);
  }
}

TEST(Batch, SinglePointPopulation) {
  const auto d = make_dataset(2, 1, 3, 2.0, 1);
  Dataset one = d;
  one.points = d.points.topRows(1);
  one.labels = {0};
  const auto b = draw_batch(one, 4, 0, 5);
  EXPECT_EQ(b.base_indices, (std::vector<int>{0, 0, 0, 0}));
  EXPECT_EQ(b.view_seeds.size(), 8u);
}

TEST(Batch, ReplayIsIdentical) {
  const auto d = make_dataset(5, 10, 4, 2.0, 1);
  EXPECT_EQ(draw_batch(d, 16, 7, 42), draw_batch(d, 16, 7, 42));
  EXPECT_NE(draw_batch(d, 16, 7, 42), draw_batch(d, 16, 8, 42));
}

TEST(Batch, RejectsSingleton) {
  const auto d = make_dataset(2, 2, 3, 2.0, 1);
  EXPECT_THROW(draw_batch(d, 1, 0, 0), DataError);
}

TEST(Batch, NegativeCountsAndCompositionEvent) {
  const auto d = make_dataset(2, 1, 3, 2.0, 1);
  BatchDraw b;
  b.base_indices = {0, 0, 1, 1};
  b.labels = {0, 0, 1, 1};
  EXPECT_EQ(count_negatives(b, 0), 2);
  EXPECT_TRUE(composition_event_holds(b, 2, 0.0));
  b.labels = {0, 0, 0, 1};
  EXPECT_FALSE(composition_event_holds(b, 2, 0.0));
  EXPECT_TRUE(composition_event_holds(b, 2, 0.3));
}

TEST(Batch, NegativeFractionDeviationWithinHoeffding) {
  const auto d = make_dataset(10, 20, 3, 2.0, 4);
  const int b = 512, draws = 10000;
  const double eps = 0.05;
  int deviations = 0;
  for (int t = 0; t < draws; ++t) {
    const auto batch = draw_batch(d, b, t, 2024);
    const double frac = static_cast<double>(count_negatives(batch, 0)) / (b - 1);
    if (std::abs(frac - 0.9) > eps) ++deviations;
  }
  EXPECT_LE(static_cast<double>(deviations) / draws, std::exp(-2.0 * b * eps * eps));
}

TEST(Schedule, ConstantSums) {
  const ScheduleSpec s{ScheduleKind::kConstant, 0.2, 0, 10, {}};
  EXPECT_NEAR(s.sum(), 2.0, 1e-14);
  EXPECT_NEAR(s.sum_squares(), 0.4, 1e-14);
  EXPECT_EQ(s.etas().size(), 10u);
}

TEST(Schedule, InverseTAndWarmup) {
  const ScheduleSpec inv{ScheduleKind::kInverseT, 1.0, 0, 4, {}};
  EXPECT_NEAR(inv.sum(), 1.0 + 0.5 + 1.0 / 3 + 0.25, 1e-14);
  const ScheduleSpec cos{ScheduleKind::kCosineWarmup, 1.0, 2, 6, {}};
  EXPECT_NEAR(cos.eta(0), 0.5, 1e-15);
  EXPECT_NEAR(cos.eta(1), 1.0, 1e-15);
  EXPECT_NEAR(cos.eta(2), 1.0, 1e-15);
  EXPECT_NEAR(cos.eta(4), 0.5, 1e-15);
  for (double e : cos.etas()) EXPECT_GT(e, 0.0);
}

TEST(Schedule, Validation) {
  EXPECT_THROW((ScheduleSpec{ScheduleKind::kConstant, 0.0, 0, 5, {}}.validate()),
               std::invalid_argument);
  EXPECT_THROW((ScheduleSpec{ScheduleKind::kCustom, 1.0, 0, 2, {0.1}}.validate()),
               std::invalid_argument);
  EXPECT_THROW((ScheduleSpec{ScheduleKind::kCustom, 1.0, 0, 2, {0.1, -0.1}}.validate()),
               std::invalid_argument);
  EXPECT_THROW(parse_schedule_kind("linear"), std::invalid_argument);
  for (auto k : {ScheduleKind::kConstant, ScheduleKind::kCosineWarmup, ScheduleKind::kInverseT,
                 ScheduleKind::kCustom}) {
    EXPECT_EQ(parse_schedule_kind(to_string(k)), k);
  }
}
