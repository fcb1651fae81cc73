#pragma once

#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace clalign::metrics {

class CkaUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class RsaUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ProbeDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Cosine-similarity matrix of the rows of `z`.
Eigen::MatrixXd cosine_gram(const Eigen::MatrixXd& z);

/// H X H with H = I - (1/N) 11^T.
Eigen::MatrixXd center(const Eigen::MatrixXd& x);

/// Linear CKA of two similarity matrices over the same N inputs.
double linear_cka_gram(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other);
double linear_cka(const Eigen::MatrixXd& z, const Eigen::MatrixXd& z_other);

/// Upper-triangular (u < v) dissimilarities 1 - sigma(u, v), M = N(N-1)/2 entries.
Eigen::VectorXd rdm_vector(const Eigen::MatrixXd& sigma);

/// Population standard deviation.
double population_std(const Eigen::VectorXd& v);

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

double rsa_gram(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other);
double rsa(const Eigen::MatrixXd& z, const Eigen::MatrixXd& z_other);

double frob_drift(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);
double offdiag_drift(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

/// ||K - K'||_F / ||K||_F for the centered Grams of the two similarity matrices.
double measured_rho(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other);
/// ||b - a||_2 / (sqrt(M) sigma_D) for the RDM vectors of the two matrices.
double measured_r(const Eigen::MatrixXd& sigma, const Eigen::MatrixXd& sigma_other);

/// Nearest class-center classifier by cosine similarity to re-normalized class
/// means of the training embeddings. Ties go to the lowest class id.
double nccc_accuracy(const Eigen::MatrixXd& train, std::span<const int> train_labels,
                     const Eigen::MatrixXd& test, std::span<const int> test_labels,
                     int num_classes);

struct ProbeOptions {
  int epochs = 500;
  double learning_rate = 0.5;
  double l2 = 0.0;
};

/// Multinomial logistic regression trained by full-batch gradient descent on
/// frozen embeddings, zero-initialized.
double linear_probe_accuracy(const Eigen::MatrixXd& train, std::span<const int> train_labels,
                             const Eigen::MatrixXd& test, std::span<const int> test_labels,
                             int num_classes, const ProbeOptions& options = {});

}  // namespace clalign::metrics
