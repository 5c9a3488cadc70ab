#include "usbl/priors.hpp"

#include <cmath>
#include <numbers>

#include "usbl/error.hpp"
#include "usbl/linalg.hpp"

namespace usbl {

namespace {
const double kLogTwoPi = std::log(2.0 * std::numbers::pi);
}

void validate(const HyperpriorConfig& h) {
  if (!(h.half_cauchy_scale_global > 0 && h.half_cauchy_scale_local > 0 &&
        h.half_normal_scale_innovation > 0 && h.half_student_t_scale > 0 &&
        h.alpha_prior_scale > 0 && h.omega_half_cauchy_scale > 0 && h.grw_intercept_scale > 0))
    throw Error(ErrorCode::DomainError, "hyperprior scales must be positive");
  if (!(h.half_student_t_df >= 1)) throw Error(ErrorCode::DomainError, "df must be >= 1");
}

Eigen::MatrixXd assemble_horseshoe_weights(const HorseshoeParams& hs) {
  if (hs.local_scales.size() != hs.raw_weights.rows())
    throw Error(ErrorCode::ShapeMismatch, "local scales vs raw weight rows");
  return hs.global_scale * (hs.local_scales.asDiagonal() * hs.raw_weights);
}

Eigen::MatrixXd grw_covariance(int K, double s0, double si) {
  if (K < 1) throw Error(ErrorCode::DomainError, "K must be >= 1");
  Eigen::MatrixXd cov(K, K);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) cov(i, j) = s0 * s0 + si * si * (std::min(i, j) + 1);
  return cov;
}

double normal_logdensity(double x, double mean, double sd) {
  const double u = (x - mean) / sd;
  return -0.5 * kLogTwoPi - std::log(sd) - 0.5 * u * u;
}

// The first element carries the intercept plus the first innovation, so its
// variance is s0^2 + si^2; later increments are N(0, si^2).
double grw_logdensity(const Eigen::Ref<const Eigen::VectorXd>& row, const GRWParams& grw) {
  if (!row.allFinite()) throw Error(ErrorCode::NonFinite, "GRW row");
  const double v0 = grw.intercept_scale * grw.intercept_scale +
                    grw.innovation_scale * grw.innovation_scale;
  double lp = normal_logdensity(row(0), 0.0, std::sqrt(v0));
  for (Eigen::Index k = 1; k < row.size(); ++k)
    lp += normal_logdensity(row(k) - row(k - 1), 0.0, grw.innovation_scale);
  return lp;
}

double grw_logdensity_grad(const Eigen::Ref<const Eigen::VectorXd>& row, const GRWParams& grw,
                           Eigen::Ref<Eigen::VectorXd> d_row, double& d_innovation) {
  const double si = grw.innovation_scale;
  const double vi = si * si;
  const double v0 = grw.intercept_scale * grw.intercept_scale + vi;
  const auto K = row.size();
  d_row.setZero();
  double lp = -0.5 * kLogTwoPi - 0.5 * std::log(v0) - 0.5 * row(0) * row(0) / v0;
  d_row(0) = -row(0) / v0;
  d_innovation = (-0.5 / v0 + 0.5 * row(0) * row(0) / (v0 * v0)) * 2.0 * si;
  for (Eigen::Index k = 1; k < K; ++k) {
    const double diff = row(k) - row(k - 1);
    lp += -0.5 * kLogTwoPi - std::log(si) - 0.5 * diff * diff / vi;
    d_row(k) -= diff / vi;
    d_row(k - 1) += diff / vi;
    d_innovation += -1.0 / si + diff * diff / (vi * si);
  }
  return lp;
}

double half_logdensity(HalfKind kind, double scale, double x, double df) {
  if (!(x > 0)) throw Error(ErrorCode::DomainError, "half-distribution argument must be > 0");
  const double u = x / scale;
  switch (kind) {
    case HalfKind::Cauchy:
      return std::log(2.0 / std::numbers::pi) - std::log(scale) - std::log1p(u * u);
    case HalfKind::Normal:
      return std::log(2.0) - 0.5 * kLogTwoPi - std::log(scale) - 0.5 * u * u;
    case HalfKind::StudentT:
      return std::log(2.0) + std::lgamma(0.5 * (df + 1)) - std::lgamma(0.5 * df) -
             0.5 * std::log(df * std::numbers::pi) - std::log(scale) -
             0.5 * (df + 1) * std::log1p(u * u / df);
  }
  return 0.0;
}

double half_logdensity_dx(HalfKind kind, double scale, double x, double df) {
  const double s2 = scale * scale;
  switch (kind) {
    case HalfKind::Cauchy:
      return -2.0 * x / (s2 + x * x);
    case HalfKind::Normal:
      return -x / s2;
    case HalfKind::StudentT:
      return -(df + 1) * x / (df * s2 + x * x);
  }
  return 0.0;
}

double mvn_logdensity(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov) {
  const Cholesky chol = cholesky_with_jitter(cov, "mvn covariance");
  const Eigen::VectorXd y = chol.llt.matrixL().solve(x);
  return -0.5 * static_cast<double>(x.size()) * kLogTwoPi - 0.5 * chol.log_det -
         0.5 * y.squaredNorm();
}

}  // namespace usbl
