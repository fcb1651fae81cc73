#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace clalign {

class DataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Class-balanced synthetic dataset. Points are stored as rows of `points`
/// and have unit Euclidean norm; `labels[i]` is in [0, num_classes).
struct Dataset {
  Eigen::MatrixXd points;  // N x m
  std::vector<int> labels;
  Eigen::MatrixXd class_means;  // C x m, unit rows (generator ground truth)
  int num_classes = 0;
  int per_class = 0;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(points.cols()); }
};

/// Draws C class means uniformly on the unit sphere in R^m, then n points per
/// class as normalize(mean + noise / class_separation) with noise ~ N(0, I/m).
/// An infinite separation gives zero intra-class noise.
Dataset make_dataset(int num_classes, int per_class, int dim, double class_separation,
                     std::uint64_t seed);

void save_dataset_csv(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset_csv(const std::filesystem::path& path);
void save_dataset_binary(const Dataset& data, const std::filesystem::path& path);
Dataset load_dataset_binary(const std::filesystem::path& path);

/// Key of one augmentation draw. `step` is -1 for the fixed reference views.
struct AugmentKey {
  std::int64_t step = 0;
  std::int64_t sample = 0;
  std::int64_t view = 0;
};

struct AugmentationKernel {
  double noise_scale = 0.0;
  std::uint64_t master_seed = 0;
};

/// normalize(point + noise_scale * N(0, I/m)) with the Gaussian keyed on `key`.
Eigen::VectorXd apply_augmentation(const Eigen::VectorXd& point,
                                   const AugmentationKernel& kernel, const AugmentKey& key);

/// One step's shared randomness. View `v` of batch position `s` uses
/// augmentation key (step, s, v); `view_seeds` holds those derived sub-seeds.
struct BatchDraw {
  std::int64_t step = 0;
  std::vector<int> base_indices;
  std::vector<int> labels;
  std::vector<std::uint64_t> view_seeds;  // 2B entries, [2s + v]

  int size() const { return static_cast<int>(base_indices.size()); }
  bool operator==(const BatchDraw&) const = default;
};

/// B indices i.i.d. uniform over [0, N), reproducible from (master_seed, step).
BatchDraw draw_batch(const Dataset& data, int batch_size, std::int64_t step,
                     std::uint64_t master_seed);

/// Number of batch positions whose label differs from the label at `anchor`.
int count_negatives(const BatchDraw& batch, int anchor);

/// True when every anchor sees at least B(1 - 1/C - eps) negatives.
bool composition_event_holds(const BatchDraw& batch, int num_classes, double epsilon);

}  // namespace clalign
