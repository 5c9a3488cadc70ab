#include "usbl/linalg.hpp"

#include <cmath>
#include <string>

#include "usbl/error.hpp"

namespace usbl {

Eigen::MatrixXd Cholesky::inverse() const {
  return llt.solve(Eigen::MatrixXd::Identity(llt.rows(), llt.cols()));
}

namespace {

bool factor(const Eigen::MatrixXd& a, Cholesky& out) {
  out.llt.compute(a);
  if (out.llt.info() != Eigen::Success) return false;
  const auto diag = out.llt.matrixLLT().diagonal();
  if ((diag.array() <= 0).any() || !diag.allFinite()) return false;
  out.log_det = 2.0 * diag.array().log().sum();
  return std::isfinite(out.log_det);
}

}  // namespace

Cholesky cholesky_with_jitter(const Eigen::MatrixXd& a, std::string_view what) {
  if (a.rows() != a.cols())
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " is not square");
  if (!a.allFinite()) throw Error(ErrorCode::NonFinite, std::string(what));
  Cholesky out;
  if (factor(a, out)) return out;
  const double jitter = 1e-8 * a.diagonal().mean();
  if (jitter > 0) {
    Eigen::MatrixXd b = a;
    b.diagonal().array() += jitter;
    if (factor(b, out)) {
      out.jittered = true;
      return out;
    }
  }
  throw Error(ErrorCode::NotPositiveDefinite, std::string(what));
}

Eigen::MatrixXd sample_covariance(const Eigen::MatrixXd& samples) {
  const auto n = samples.cols();
  if (n < 2) throw Error(ErrorCode::InsufficientData, "covariance needs >= 2 samples");
  const Eigen::VectorXd mean = samples.rowwise().mean();
  const Eigen::MatrixXd centered = samples.colwise() - mean;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(samples.rows(), samples.rows());
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered);
  cov = cov.selfadjointView<Eigen::Lower>();
  return cov / static_cast<double>(n - 1);
}

}  // namespace usbl
