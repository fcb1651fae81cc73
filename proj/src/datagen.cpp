#include "clalign/datagen.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <string>

#include "clalign/rng.hpp"

namespace clalign {
namespace {

Eigen::VectorXd gaussian_vector(Rng& rng, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (int k = 0; k < dim; ++k) v[k] = normal(rng);
  return v;
}

// N(0, I/m): unit expected squared norm in any dimension
Eigen::VectorXd unit_noise(Rng& rng, int dim) {
  return gaussian_vector(rng, dim) / std::sqrt(static_cast<double>(dim));
}

Eigen::VectorXd normalized_or_throw(const Eigen::VectorXd& v) {
  const double norm = v.norm();
  if (!(norm > 0.0) || !std::isfinite(norm)) {
    throw DataError("cannot normalize a zero or non-finite vector");
  }
  return v / norm;
}

constexpr char kBinaryMagic[8] = {'C', 'L', 'A', 'D', 'A', 'T', 'A', '1'};

}  // namespace

Dataset make_dataset(int num_classes, int per_class, int dim, double class_separation,
                     std::uint64_t seed) {
  if (num_classes < 2) throw DataError("make_dataset: need at least 2 classes");
  if (per_class < 1) throw DataError("make_dataset: need at least 1 point per class");
  if (dim < 2) throw DataError("make_dataset: ambient dimension must be >= 2");
  if (!(class_separation > 0.0)) throw DataError("make_dataset: class_separation must be > 0");

  Dataset data;
  data.num_classes = num_classes;
  data.per_class = per_class;
  data.class_means.resize(num_classes, dim);
  for (int c = 0; c < num_classes; ++c) {
    auto rng = make_rng(seed, Stream::kClassMeans, c);
    data.class_means.row(c) = normalized_or_throw(gaussian_vector(rng, dim)).transpose();
  }

  const double noise = std::isinf(class_separation) ? 0.0 : 1.0 / class_separation;
  const int total = num_classes * per_class;
  data.points.resize(total, dim);
  data.labels.resize(total);
  // Points are laid out class by class.
  for (int c = 0; c < num_classes; ++c) {
    for (int j = 0; j < per_class; ++j) {
      const int idx = c * per_class + j;
      auto rng = make_rng(seed, Stream::kPoints, idx);
      Eigen::VectorXd x = data.class_means.row(c).transpose();
      if (noise > 0.0) x += noise * unit_noise(rng, dim);
      data.points.row(idx) = normalized_or_throw(x).transpose();
      data.labels[idx] = c;
    }
  }
  return data;
}

Eigen::VectorXd apply_augmentation(const Eigen::VectorXd& point,
                                   const AugmentationKernel& kernel, const AugmentKey& key) {
  if (kernel.noise_scale == 0.0) return point;
  auto rng = make_rng(kernel.master_seed, Stream::kAugment, key.step, key.sample, key.view);
  Eigen::VectorXd out = point + kernel.noise_scale * unit_noise(rng, static_cast<int>(point.size()));
  return normalized_or_throw(out);
}

BatchDraw draw_batch(const Dataset& data, int batch_size, std::int64_t step,
                     std::uint64_t master_seed) {
  if (batch_size < 2) throw DataError("draw_batch: batch size must be >= 2");
  if (data.size() == 0) throw DataError("draw_batch: empty dataset");
  BatchDraw batch;
  batch.step = step;
  batch.base_indices.resize(batch_size);
  batch.labels.resize(batch_size);
  batch.view_seeds.resize(2 * static_cast<std::size_t>(batch_size));

  auto rng = make_rng(master_seed, Stream::kBatch, step);
  std::uniform_int_distribution<int> pick(0, data.size() - 1);
  for (int s = 0; s < batch_size; ++s) {
    const int idx = pick(rng);
    batch.base_indices[s] = idx;
    batch.labels[s] = data.labels[idx];
    for (int v = 0; v < 2; ++v) {
      batch.view_seeds[2 * s + v] = derive_seed(master_seed, Stream::kAugment, step, s, v);
    }
  }
  return batch;
}

int count_negatives(const BatchDraw& batch, int anchor) {
  const int label = batch.labels.at(anchor);
  int negatives = 0;
  for (int y : batch.labels) negatives += (y != label) ? 1 : 0;
  return negatives;
}

bool composition_event_holds(const BatchDraw& batch, int num_classes, double epsilon) {
  const double b = batch.size();
  const double threshold = 1.0 - 1.0 / num_classes - epsilon;
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : batch.labels) ++counts.at(static_cast<std::size_t>(y));
  for (int y : batch.labels) {
    if ((b - counts[y]) / b < threshold) return false;
  }
  return true;
}

void save_dataset_csv(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out << "index,label";
  for (int k = 0; k < data.dim(); ++k) out << ",x" << k;
  out << '\n';
  out << std::setprecision(17);
  for (int i = 0; i < data.size(); ++i) {
    out << i << ',' << data.labels[i];
    for (int k = 0; k < data.dim(); ++k) out << ',' << data.points(i, k);
    out << '\n';
  }
}

Dataset load_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": missing header");
  int dim = 0;
  {
    std::stringstream header(line);
    std::string cell;
    int column = 0;
    while (std::getline(header, cell, ',')) ++column;
    dim = column - 2;
  }
  if (dim < 1) throw DataError(path.string() + ": header must be index,label,x0,...");

  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::string cell;
    std::vector<double> values;
    std::getline(row, cell, ',');  // index
    std::getline(row, cell, ',');
    labels.push_back(std::stoi(cell));
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
    if (static_cast<int>(values.size()) != dim) {
      throw DataError(path.string() + ": row " + std::to_string(rows.size()) +
                      " has the wrong number of columns");
    }
    rows.push_back(std::move(values));
  }

  Dataset data;
  data.points.resize(static_cast<Eigen::Index>(rows.size()), dim);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (int k = 0; k < dim; ++k) data.points(static_cast<Eigen::Index>(i), k) = rows[i][k];
  }
  data.labels = std::move(labels);
  int max_label = -1;
  for (int y : data.labels) max_label = std::max(max_label, y);
  data.num_classes = max_label + 1;
  data.per_class = data.num_classes > 0 ? data.size() / data.num_classes : 0;
  return data;
}

void save_dataset_binary(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  auto put_i64 = [&](std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), sizeof v); };
  out.write(kBinaryMagic, sizeof kBinaryMagic);
  put_i64(data.size());
  put_i64(data.dim());
  put_i64(data.num_classes);
  put_i64(data.per_class);
  for (int i = 0; i < data.size(); ++i) {
    put_i64(data.labels[i]);
    for (int k = 0; k < data.dim(); ++k) {
      const double v = data.points(i, k);
      out.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
  }
}

Dataset load_dataset_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char magic[sizeof kBinaryMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kBinaryMagic, sizeof magic) != 0) {
    throw DataError(path.string() + ": not a dataset file");
  }
  auto get_i64 = [&] {
    std::int64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw DataError(path.string() + ": truncated");
    return v;
  };
  const auto n = get_i64();
  const auto dim = get_i64();
  Dataset data;
  data.num_classes = static_cast<int>(get_i64());
  data.per_class = static_cast<int>(get_i64());
  data.points.resize(n, dim);
  data.labels.resize(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    data.labels[static_cast<std::size_t>(i)] = static_cast<int>(get_i64());
    for (std::int64_t k = 0; k < dim; ++k) {
      double v = 0;
      in.read(reinterpret_cast<char*>(&v), sizeof v);
      data.points(i, k) = v;
    }
  }
  if (!in) throw DataError(path.string() + ": truncated");
  return data;
}

}  // namespace clalign
