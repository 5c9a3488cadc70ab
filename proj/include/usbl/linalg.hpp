#pragma once

#include <Eigen/Dense>
#include <string_view>

namespace usbl {

struct Cholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double log_det = 0.0;
  bool jittered = false;

  Eigen::MatrixXd solve(const Eigen::MatrixXd& b) const { return llt.solve(b); }
  Eigen::MatrixXd inverse() const;
};

/// Cholesky factorization that retries once with an additive jitter of
/// 1e-8 x mean diagonal before throwing NotPositiveDefinite.
Cholesky cholesky_with_jitter(const Eigen::MatrixXd& a, std::string_view what);

inline Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& a) { return 0.5 * (a + a.transpose()); }

/// Sample covariance (divisor n - 1) of the columns of `samples`
/// (variables x observations).
Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples);

}  // namespace usbl
