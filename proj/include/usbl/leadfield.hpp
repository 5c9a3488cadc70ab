#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <vector>

#include "usbl/dataset.hpp"

namespace usbl {

/// Source-to-channel gain matrix with flexible (3-axis) dipole orientations.
struct LeadField {
  Eigen::MatrixXd gains;              // C x 3S, column triplets per vertex
  Eigen::MatrixXd vertex_positions;   // S x 3
  std::vector<int> region_of_vertex;  // ids in [1, region_count]
  int region_count = 1;

  int channels() const { return static_cast<int>(gains.rows()); }
  int vertices() const { return static_cast<int>(vertex_positions.rows()); }
};

void validate(const LeadField& lf);

/// Reads `gains.usbl`, `positions.usbl` and `regions.usbl` from `dir`.
LeadField load_leadfield(const std::filesystem::path& dir);
void save_leadfield(const LeadField& lf, const std::filesystem::path& dir);

double mean_nearest_neighbor_distance(const Eigen::MatrixXd& positions);

/// Unit-norm rows, then Gaussian smoothing of each orientation's columns across
/// vertices (width = kernel_multiplier x mean nearest-neighbour distance,
/// truncated at 3 widths), then rows renormalized. A multiplier of 0 skips
/// smoothing.
LeadField preprocess_leadfield(const LeadField& lf, double kernel_multiplier = 2.0);

struct SourceHyper {
  Eigen::VectorXd gamma;  // per region
};

/// G_r = sum over vertices s in region r of L_s L_s'.
std::vector<Eigen::MatrixXd> region_grams(const LeadField& lf);

Eigen::MatrixXd build_spatial_covariance(const LeadField& lf, const SourceHyper& hyper,
                                         const Eigen::MatrixXd& noise_cov);
Eigen::MatrixXd build_spatial_covariance(std::span<const Eigen::MatrixXd> grams,
                                         const Eigen::VectorXd& gamma,
                                         const Eigen::MatrixXd& noise_cov);

struct FactorAnalysis {
  Eigen::MatrixXd loadings;  // C x n_factors
  Eigen::VectorXd psi;       // unique variances
  Eigen::MatrixXd cov;       // diag(psi) + loadings loadings'
  std::vector<double> loglik_trace;
  int iterations = 0;
  bool converged = true;
};

/// Maximum-likelihood factor analysis fitted by EM on `samples`
/// (channels x observations).
FactorAnalysis estimate_noise_covariance(const Eigen::MatrixXd& samples, int n_factors = 5,
                                         int em_iters = 500, double tol = 1e-9);

/// (1 - lambda) S + lambda diag(S).
Eigen::MatrixXd shrink_to_diagonal(const Eigen::MatrixXd& cov, double lambda);
Eigen::MatrixXd estimate_data_covariance(const Eigen::MatrixXd& samples, double lambda = 0.01);

/// Decoding weights Sigma_X^{-1} A via Cholesky (one jitter retry).
Eigen::MatrixXd haufe_weights(const Eigen::MatrixXd& sigma_x, const Eigen::MatrixXd& pattern);

double matrix_normal_logdensity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& sigma_u,
                                const Eigen::MatrixXd& sigma_v);

struct MatrixNormalGrad {
  double value = 0.0;
  Eigen::MatrixXd d_a;
  Eigen::MatrixXd d_sigma_u;
  Eigen::MatrixXd d_sigma_v;
};

MatrixNormalGrad matrix_normal_logdensity_grad(const Eigen::MatrixXd& a,
                                               const Eigen::MatrixXd& sigma_u,
                                               const Eigen::MatrixXd& sigma_v);

struct CovarianceEstimate {
  Eigen::MatrixXd data_cov;
  Eigen::MatrixXd noise_cov;
  Eigen::MatrixXd post_cov;
  Eigen::MatrixXd pre_cov;
  double shrinkage = 0.01;
  bool noise_converged = true;
};

/// Pools pre-stimulus samples (noise, factor analysis) and post-stimulus
/// samples (data covariance) across every trial of `sessions`.
CovarianceEstimate estimate_covariances(std::span<const Session> sessions,
                                        const ModalityShape& shape, int n_factors = 5,
                                        double shrinkage = 0.01);

}  // namespace usbl
