#pragma once

// Independent reference computations. Deliberately naive: dense matrices,
// all-pairs loops and grid quadrature, so they share no code path with the
// library routines they check.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

namespace oracle {

inline double auc_all_pairs(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        ++pairs;
        if (s[i] > s[j]) wins += 1.0;
        else if (s[i] == s[j]) wins += 0.5;
      }
  return wins / static_cast<double>(pairs);
}

inline double mvn_logdensity_dense(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov) {
  const double n = static_cast<double>(x.size());
  const double logdet = std::log(cov.determinant());
  const double quad = x.dot(cov.inverse() * x);
  return -0.5 * (n * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

inline Eigen::MatrixXd kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// vec(A) ~ N(0, Sigma_V kron Sigma_U) with column-major vec.
inline double matrix_normal_kron(const Eigen::MatrixXd& a, const Eigen::MatrixXd& su,
                                 const Eigen::MatrixXd& sv) {
  const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(a.data(), a.size());
  return mvn_logdensity_dense(v, kron(sv, su));
}

inline Eigen::MatrixXd grw_cov_loops(int k, double s0, double si) {
  Eigen::MatrixXd c(k, k);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) c(i, j) = s0 * s0 + si * si * (std::min(i, j) + 1);
  return c;
}

/// Ledoit-Wolf intensity through the (1/n^2) sum |x x' - S|^2 route.
struct LwHand {
  Eigen::MatrixXd s;
  double mu;
  double lambda;
};

inline LwHand ledoit_wolf_hand(Eigen::MatrixXd x) {
  const double n = static_cast<double>(x.rows());
  const double p = static_cast<double>(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double m = 0;
    for (Eigen::Index i = 0; i < x.rows(); ++i) m += x(i, j);
    m /= n;
    for (Eigen::Index i = 0; i < x.rows(); ++i) x(i, j) -= m;
  }
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) s += x.row(i).transpose() * x.row(i);
  s /= n;
  const double mu = s.trace() / p;
  const Eigen::MatrixXd target = mu * Eigen::MatrixXd::Identity(x.cols(), x.cols());
  const double d2 = (s - target).squaredNorm() / p;
  double b2 = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::MatrixXd xx = x.row(i).transpose() * x.row(i);
    b2 += (xx - s).squaredNorm() / p;
  }
  b2 /= n * n;
  const double lambda = d2 == 0.0 ? 1.0 : std::min(b2, d2) / d2;
  return {s, mu, lambda};
}

inline double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// Posterior of omega on a dense grid: HalfCauchy(scale) prior times the
/// Bernoulli likelihood of logistic(omega z). Returns the median.
inline double omega_median_quadrature(const std::vector<double>& z, const std::vector<int>& y,
                                      double scale, double hi = 2000.0, int n = 400000) {
  // Integrate in u = log(omega) for resolution across decades.
  const double u_lo = std::log(1e-6), u_hi = std::log(hi);
  const double du = (u_hi - u_lo) / n;
  std::vector<double> logd(static_cast<std::size_t>(n + 1));
  double mx = -1e300;
  for (int i = 0; i <= n; ++i) {
    const double u = u_lo + i * du, w = std::exp(u);
    double l = std::log(2.0 / (std::numbers::pi * scale * (1.0 + (w / scale) * (w / scale)))) + u;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double p = logistic(w * z[k]);
      l += y[k] ? std::log(p) : std::log1p(-p);
    }
    logd[static_cast<std::size_t>(i)] = l;
    mx = std::max(mx, l);
  }
  std::vector<double> cdf(logd.size(), 0.0);
  for (std::size_t i = 1; i < logd.size(); ++i)
    cdf[i] = cdf[i - 1] + 0.5 * du * (std::exp(logd[i] - mx) + std::exp(logd[i - 1] - mx));
  const double total = cdf.back();
  for (std::size_t i = 1; i < cdf.size(); ++i)
    if (cdf[i] >= 0.5 * total) {
      const double f = (0.5 * total - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
      return std::exp(u_lo + (static_cast<double>(i) - 1.0 + f) * du);
    }
  return hi;
}

/// Posterior mean of omega by the same grid.
inline double omega_mean_quadrature(const std::vector<double>& z, const std::vector<int>& y,
                                    double scale, double hi = 2000.0, int n = 400000) {
  const double u_lo = std::log(1e-6), u_hi = std::log(hi);
  const double du = (u_hi - u_lo) / n;
  std::vector<double> logd(static_cast<std::size_t>(n + 1));
  double mx = -1e300;
  for (int i = 0; i <= n; ++i) {
    const double u = u_lo + i * du, w = std::exp(u);
    double l = -std::log1p((w / scale) * (w / scale)) + u;
    for (std::size_t k = 0; k < z.size(); ++k) {
      const double p = logistic(w * z[k]);
      l += y[k] ? std::log(p) : std::log1p(-p);
    }
    logd[static_cast<std::size_t>(i)] = l;
    mx = std::max(mx, l);
  }
  double num = 0, den = 0;
  for (int i = 0; i <= n; ++i) {
    const double wgt = std::exp(logd[static_cast<std::size_t>(i)] - mx) * ((i == 0 || i == n) ? 0.5 : 1.0);
    num += wgt * std::exp(u_lo + i * du);
    den += wgt;
  }
  return num / den;
}

}  // namespace oracle
