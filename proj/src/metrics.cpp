#include "clalign/metrics.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace clalign::metrics {
namespace {

void require_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument("shape mismatch: " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

void require_classes_present(std::span<const int> labels, int num_classes) {
  std::vector<int> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw std::invalid_argument("label out of range");
    ++counts[y];
  }
  for (int c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw std::invalid_argument("class " + std::to_string(c) + " missing from training set");
    }
  }
}

}  // namespace

Eigen::MatrixXd cosine_gram(const Eigen::MatrixXd& z) {
  Eigen::MatrixXd unit = z;
  for (Eigen::Index i = 0; i < unit.rows(); ++i) {
    const double norm = unit.row(i).norm();
    if (!(norm > 0.0)) throw std::invalid_argument("cosine_gram: zero embedding");
    unit.row(i) /= norm;
  }
  Eigen::MatrixXd gram = unit * unit.transpose();
  gram.diagonal().setOnes();
  return gram;
}

Eigen::MatrixXd center(const Eigen::MatrixXd& x) {
  const Eigen::RowVectorXd col_mean = x.colwise().mean();
  Eigen::MatrixXd out = x.rowwise() - col_mean;
  const Eigen::VectorXd row_mean = out.rowwise().mean();
  out.colwise() -= row_mean;
  return out;
}

double linear_cka_gram(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other) {
  require_same_shape(sigma, sigma_other);
  if (sigma.rows() < 3) throw std::invalid_argument("linear_cka: need N >= 3");
  const Eigen::MatrixXd k = center(sigma);
  const Eigen::MatrixXd k_other = center(sigma_other);
  const double nk = k.norm();
  const double nk_other = k_other.norm();
  if (!(nk > 0.0) || !(nk_other > 0.0)) throw CkaUndefined("centered Gram is the zero matrix");
  return (k.array() * k_other.array()).sum() / (nk * nk_other);
}

double linear_cka(const Eigen::MatrixXd& z, const Eigen::MatrixXd& z_other) {
  return linear_cka_gram(cosine_gram(z), cosine_gram(z_other));
}

Eigen::VectorXd rdm_vector(const Eigen::MatrixXd& sigma) {
  const Eigen::Index n = sigma.rows();
  Eigen::VectorXd out(n * (n - 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index v = 1; v < n; ++v) {
    for (Eigen::Index u = 0; u < v; ++u) out[k++] = 1.0 - sigma(u, v);
  }
  return out;
}

double population_std(const Eigen::VectorXd& v) {
  const double mean = v.mean();
  return std::sqrt((v.array() - mean).square().mean());
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson: bad lengths");
  const Eigen::ArrayXd ac = a.array() - a.mean();
  const Eigen::ArrayXd bc = b.array() - b.mean();
  const double na = std::sqrt(ac.square().sum());
  const double nb = std::sqrt(bc.square().sum());
  if (!(na > 0.0) || !(nb > 0.0)) throw RsaUndefined("constant dissimilarity vector");
  return (ac * bc).sum() / (na * nb);
}

double rsa_gram(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other) {
  require_same_shape(sigma, sigma_other);
  return pearson(rdm_vector(sigma), rdm_vector(sigma_other));
}

double rsa(const Eigen::MatrixXd& z, const Eigen::MatrixXd& z_other) {
  return rsa_gram(cosine_gram(z), cosine_gram(z_other));
}

double frob_drift(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require_same_shape(a, b);
  return (a - b).norm();
}

double offdiag_drift(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require_same_shape(a, b);
  Eigen::MatrixXd d = a - b;
  d.diagonal().setZero();
  return d.norm();
}

double measured_rho(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other) {
  require_same_shape(sigma, sigma_other);
  const Eigen::MatrixXd k = center(sigma);
  const double nk = k.norm();
  if (!(nk > 0.0)) throw CkaUndefined("centered Gram is the zero matrix");
  return (k - center(sigma_other)).norm() / nk;
}

double measured_r(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other) {
  require_same_shape(sigma, sigma_other);
  const Eigen::VectorXd a = rdm_vector(sigma);
  const Eigen::VectorXd b = rdm_vector(sigma_other);
  const double sd = population_std(a);
  if (!(sd > 0.0)) throw RsaUndefined("constant dissimilarity vector");
  return (b - a).norm() / (std::sqrt(static_cast<double>(a.size())) * sd);
}

double nccc_accuracy(const Eigen::MatrixXd& train, std::span<const int> train_labels,
                     const Eigen::MatrixXd& test, std::span<const int> test_labels,
                     int num_classes) {
  require_classes_present(train_labels, num_classes);
  if (test.rows() == 0) throw std::invalid_argument("nccc: empty test set");
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(num_classes, train.cols());
  for (Eigen::Index i = 0; i < train.rows(); ++i) {
    means.row(train_labels[i]) += train.row(i).normalized();
  }
  for (int c = 0; c < num_classes; ++c) {
    const double norm = means.row(c).norm();
    if (norm > 0.0) means.row(c) /= norm;
  }
  int correct = 0;
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    const Eigen::RowVectorXd x = test.row(i).normalized();
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < num_classes; ++c) {
      const double score = means.row(c).dot(x);
      if (score > best_score) {
        best_score = score;
        best = c;
      }
    }
    correct += (best == test_labels[i]) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(test.rows());
}

double linear_probe_accuracy(const Eigen::MatrixXd& train, std::span<const int> train_labels,
                             const Eigen::MatrixXd& test, std::span<const int> test_labels,
                             int num_classes, const ProbeOptions& options) {
  require_classes_present(train_labels, num_classes);
  const Eigen::Index n = train.rows();
  const Eigen::Index dim = train.cols();
  Eigen::MatrixXd weight = Eigen::MatrixXd::Zero(num_classes, dim);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(num_classes);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, train_labels[i]) = 1.0;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    Eigen::MatrixXd logits = train * weight.transpose();
    logits.rowwise() += bias.transpose();
    const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
    Eigen::MatrixXd prob = (logits.colwise() - row_max).array().exp().matrix();
    const Eigen::VectorXd row_sum = prob.rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) prob.row(i) /= row_sum[i];

    double loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) loss -= std::log(prob(i, train_labels[i]));
    if (!std::isfinite(loss)) throw ProbeDiverged("linear probe loss became non-finite");

    const Eigen::MatrixXd residual = (prob - onehot) / static_cast<double>(n);
    weight -= options.learning_rate * (residual.transpose() * train + options.l2 * weight);
    bias -= options.learning_rate * residual.colwise().sum().transpose();
  }

  int correct = 0;
  for (Eigen::Index i = 0; i < test.rows(); ++i) {
    const Eigen::VectorXd scores = weight * test.row(i).transpose() + bias;
    Eigen::Index best = 0;
    scores.maxCoeff(&best);
    correct += (static_cast<int>(best) == test_labels[i]) ? 1 : 0;
  }
  return test.rows() > 0 ? static_cast<double>(correct) / static_cast<double>(test.rows()) : 0.0;
}

}  // namespace clalign::metrics
