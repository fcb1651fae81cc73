#pragma once

// Independent brute-force reference implementations used by the tests.

#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

/// Central finite differences of f at x with step h over every coordinate.
inline Eigen::VectorXd central_difference(const std::function<double(const Eigen::VectorXd&)>& f,
                                          const Eigen::VectorXd& x, double h = 1e-5) {
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd probe = x;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    probe[k] = x[k] + h;
    const double up = f(probe);
    probe[k] = x[k] - h;
    const double down = f(probe);
    probe[k] = x[k];
    g[k] = (up - down) / (2.0 * h);
  }
  return g;
}

inline double relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& reference) {
  const double scale = std::max(reference.norm(), 1e-12);
  return (analytic - reference).norm() / scale;
}

/// Naive double-loop linear CKA of two similarity matrices.
inline double naive_cka(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const int n = static_cast<int>(a.rows());
  auto centered = [n](const Eigen::MatrixXd& m) {
    std::vector<double> row(n, 0.0), col(n, 0.0);
    double all = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        row[i] += m(i, j) / n;
        col[j] += m(i, j) / n;
        all += m(i, j) / (static_cast<double>(n) * n);
      }
    }
    Eigen::MatrixXd k(n, n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) k(i, j) = m(i, j) - row[i] - col[j] + all;
    }
    return k;
  };
  const Eigen::MatrixXd ka = centered(a);
  const Eigen::MatrixXd kb = centered(b);
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      ab += ka(i, j) * kb(i, j);
      aa += ka(i, j) * ka(i, j);
      bb += kb(i, j) * kb(i, j);
    }
  }
  return ab / std::sqrt(aa * bb);
}

/// Textbook two-pass Pearson correlation.
inline double two_pass_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

/// Naive cosine similarity of two vectors.
inline double cosine(const Eigen::VectorXd& u, const Eigen::VectorXd& v) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (Eigen::Index k = 0; k < u.size(); ++k) {
    uv += u[k] * v[k];
    uu += u[k] * u[k];
    vv += v[k] * v[k];
  }
  return uv / std::sqrt(uu * vv);
}

}  // namespace oracle
