#pragma once

#include <Eigen/Dense>
#include <optional>

namespace usbl {

struct HorseshoeParams {
  double global_scale = 1.0;
  Eigen::VectorXd local_scales;  // one per channel
  Eigen::MatrixXd raw_weights;   // channels x samples
};

struct GRWParams {
  double intercept_scale = 1.0;
  double innovation_scale = 0.1;
};

struct HyperpriorConfig {
  double half_cauchy_scale_global = 1.0;
  double half_cauchy_scale_local = 1.0;
  double half_normal_scale_innovation = 0.1;
  double half_student_t_df = 3.0;
  double half_student_t_scale = 0.1;
  double alpha_prior_scale = 1.0;
  double omega_half_cauchy_scale = 10.0;
  double grw_intercept_scale = 1.0;
};

void validate(const HyperpriorConfig& h);

/// W = global * diag(local) * raw.
Eigen::MatrixXd assemble_horseshoe_weights(const HorseshoeParams& hs);

/// K x K covariance of a Gaussian random walk: s0^2 11' + si^2 JJ'.
Eigen::MatrixXd grw_covariance(int K, double intercept_scale, double innovation_scale);

/// Telescoping GRW log-density of one weight row.
double grw_logdensity(const Eigen::Ref<const Eigen::VectorXd>& row, const GRWParams& grw);

/// Same density with derivatives with respect to the row and the innovation scale.
double grw_logdensity_grad(const Eigen::Ref<const Eigen::VectorXd>& row, const GRWParams& grw,
                           Eigen::Ref<Eigen::VectorXd> d_row, double& d_innovation);

enum class HalfKind { Cauchy, Normal, StudentT };

double half_logdensity(HalfKind kind, double scale, double x, double df = 3.0);
/// d/dx of half_logdensity.
double half_logdensity_dx(HalfKind kind, double scale, double x, double df = 3.0);

double normal_logdensity(double x, double mean, double sd);

/// Log-density of a zero-mean multivariate normal evaluated via Cholesky.
double mvn_logdensity(const Eigen::VectorXd& x, const Eigen::MatrixXd& cov);

}  // namespace usbl
