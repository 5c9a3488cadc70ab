#include "usbl/leadfield.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "usbl/error.hpp"
#include "usbl/linalg.hpp"
#include "usbl/tensor_io.hpp"

namespace usbl {

namespace fs = std::filesystem;

void validate(const LeadField& lf) {
  const auto S = lf.vertex_positions.rows();
  if (lf.gains.rows() < 2) throw Error(ErrorCode::ShapeMismatch, "lead field needs >= 2 channels");
  if (S < 1 || lf.vertex_positions.cols() != 3)
    throw Error(ErrorCode::ShapeMismatch, "vertex positions must be S x 3");
  if (lf.gains.cols() != 3 * S)
    throw Error(ErrorCode::ShapeMismatch, "gains must have 3 columns per vertex");
  if (static_cast<Eigen::Index>(lf.region_of_vertex.size()) != S)
    throw Error(ErrorCode::ShapeMismatch, "one region id per vertex required");
  if (lf.region_count < 1) throw Error(ErrorCode::ShapeMismatch, "region_count must be >= 1");
  for (int r : lf.region_of_vertex)
    if (r < 1 || r > lf.region_count)
      throw Error(ErrorCode::ShapeMismatch, "region id out of range: " + std::to_string(r));
  if (!lf.gains.allFinite()) throw Error(ErrorCode::NonFinite, "lead-field gains");
}

LeadField load_leadfield(const fs::path& dir) {
  const Tensor g = read_tensor(dir / "gains.usbl");
  const Tensor p = read_tensor(dir / "positions.usbl");
  const Tensor r = read_tensor(dir / "regions.usbl");
  if (g.dims.size() != 2 || p.dims.size() != 2 || p.dims[1] != 3 || r.dims.size() != 1)
    throw Error(ErrorCode::ShapeMismatch, "lead-field tensors in " + dir.string());
  LeadField lf;
  lf.gains.resize(static_cast<Eigen::Index>(g.dims[0]), static_cast<Eigen::Index>(g.dims[1]));
  for (Eigen::Index i = 0; i < lf.gains.rows(); ++i)
    for (Eigen::Index j = 0; j < lf.gains.cols(); ++j)
      lf.gains(i, j) = g.values[i * lf.gains.cols() + j];
  lf.vertex_positions.resize(static_cast<Eigen::Index>(p.dims[0]), 3);
  for (Eigen::Index i = 0; i < lf.vertex_positions.rows(); ++i)
    for (int j = 0; j < 3; ++j) lf.vertex_positions(i, j) = p.values[i * 3 + j];
  lf.region_count = 0;
  for (float v : r.values) {
    lf.region_of_vertex.push_back(static_cast<int>(std::lround(v)));
    lf.region_count = std::max(lf.region_count, lf.region_of_vertex.back());
  }
  validate(lf);
  return lf;
}

void save_leadfield(const LeadField& lf, const fs::path& dir) {
  validate(lf);
  fs::create_directories(dir);
  auto flat = [](const Eigen::MatrixXd& m) {
    std::vector<float> v;
    v.reserve(m.size());
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) v.push_back(static_cast<float>(m(i, j)));
    return v;
  };
  std::vector<std::uint64_t> gd = {static_cast<std::uint64_t>(lf.gains.rows()),
                                   static_cast<std::uint64_t>(lf.gains.cols())};
  write_tensor(dir / "gains.usbl", gd, flat(lf.gains));
  std::vector<std::uint64_t> pd = {static_cast<std::uint64_t>(lf.vertex_positions.rows()), 3};
  write_tensor(dir / "positions.usbl", pd, flat(lf.vertex_positions));
  std::vector<float> regions(lf.region_of_vertex.begin(), lf.region_of_vertex.end());
  std::vector<std::uint64_t> rd = {regions.size()};
  write_tensor(dir / "regions.usbl", rd, regions);
}

double mean_nearest_neighbor_distance(const Eigen::MatrixXd& positions) {
  const auto S = positions.rows();
  if (S < 2) throw Error(ErrorCode::DegenerateGeometry, "smoothing needs >= 2 vertices");
  double total = 0.0;
  for (Eigen::Index i = 0; i < S; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < S; ++j)
      if (j != i) best = std::min(best, (positions.row(i) - positions.row(j)).norm());
    total += best;
  }
  return total / static_cast<double>(S);
}

namespace {

void normalize_rows(Eigen::MatrixXd& gains) {
  for (Eigen::Index c = 0; c < gains.rows(); ++c) {
    const double n = gains.row(c).norm();
    if (!(n > 0)) throw Error(ErrorCode::ZeroRow, "lead-field row " + std::to_string(c));
    gains.row(c) /= n;
  }
}

}  // namespace

LeadField preprocess_leadfield(const LeadField& lf, double kernel_multiplier) {
  validate(lf);
  LeadField out = lf;
  normalize_rows(out.gains);
  if (kernel_multiplier <= 0) return out;

  const auto S = lf.vertex_positions.rows();
  const double width = kernel_multiplier * mean_nearest_neighbor_distance(lf.vertex_positions);
  if (!(width > 0)) throw Error(ErrorCode::DegenerateGeometry, "zero smoothing width");
  const double cutoff2 = 9.0 * width * width;

  // kernel(j, s): weight of vertex j in the smoothed value at s; columns sum to 1.
  Eigen::MatrixXd kernel = Eigen::MatrixXd::Zero(S, S);
  for (Eigen::Index s = 0; s < S; ++s) {
    for (Eigen::Index j = 0; j < S; ++j) {
      const double d2 = (lf.vertex_positions.row(s) - lf.vertex_positions.row(j)).squaredNorm();
      if (d2 <= cutoff2) kernel(j, s) = std::exp(-d2 / (2.0 * width * width));
    }
    kernel.col(s) /= kernel.col(s).sum();
  }

  const auto C = out.gains.rows();
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::MatrixXd comp(C, S);
    for (Eigen::Index s = 0; s < S; ++s) comp.col(s) = out.gains.col(3 * s + axis);
    const Eigen::MatrixXd smoothed = comp * kernel;
    for (Eigen::Index s = 0; s < S; ++s) out.gains.col(3 * s + axis) = smoothed.col(s);
  }
  normalize_rows(out.gains);
  return out;
}

std::vector<Eigen::MatrixXd> region_grams(const LeadField& lf) {
  validate(lf);
  const auto C = lf.gains.rows();
  std::vector<Eigen::MatrixXd> grams(lf.region_count, Eigen::MatrixXd::Zero(C, C));
  for (int s = 0; s < lf.vertices(); ++s) {
    const auto block = lf.gains.middleCols(3 * s, 3);
    grams[lf.region_of_vertex[s] - 1].noalias() += block * block.transpose();
  }
  return grams;
}

Eigen::MatrixXd build_spatial_covariance(std::span<const Eigen::MatrixXd> grams,
                                         const Eigen::VectorXd& gamma,
                                         const Eigen::MatrixXd& noise_cov) {
  if (static_cast<Eigen::Index>(grams.size()) != gamma.size())
    throw Error(ErrorCode::ShapeMismatch, "one gamma per region required");
  Eigen::MatrixXd sigma = noise_cov;
  for (std::size_t r = 0; r < grams.size(); ++r) {
    if (grams[r].rows() != noise_cov.rows() || grams[r].cols() != noise_cov.cols())
      throw Error(ErrorCode::ShapeMismatch, "region gram vs noise covariance");
    sigma += gamma(static_cast<Eigen::Index>(r)) * gamma(static_cast<Eigen::Index>(r)) * grams[r];
  }
  return symmetrize(sigma);
}

Eigen::MatrixXd build_spatial_covariance(const LeadField& lf, const SourceHyper& hyper,
                                         const Eigen::MatrixXd& noise_cov) {
  if (noise_cov.rows() != lf.channels() || noise_cov.cols() != lf.channels())
    throw Error(ErrorCode::ShapeMismatch, "noise covariance vs lead-field channels");
  const auto grams = region_grams(lf);
  return build_spatial_covariance(grams, hyper.gamma, noise_cov);
}

namespace {

double fa_loglik(const Eigen::MatrixXd& sample_cov, const Eigen::MatrixXd& model_cov, double n) {
  const Cholesky chol = cholesky_with_jitter(model_cov, "factor-analysis covariance");
  const double tr = chol.solve(sample_cov).trace();
  const double C = static_cast<double>(sample_cov.rows());
  return -0.5 * n * (C * std::log(2.0 * std::numbers::pi) + chol.log_det + tr);
}

}  // namespace

FactorAnalysis estimate_noise_covariance(const Eigen::MatrixXd& samples, int n_factors,
                                         int em_iters, double tol) {
  const auto C = samples.rows();
  const auto n = samples.cols();
  if (n <= C) throw Error(ErrorCode::InsufficientData, "factor analysis needs more samples than channels");
  if (n_factors < 0 || n_factors >= C)
    throw Error(ErrorCode::DomainError, "n_factors must be in [0, channels)");
  const Eigen::MatrixXd S_raw = sample_covariance(samples);

  FactorAnalysis fa;
  if (n_factors == 0) {
    const Eigen::MatrixXd& S = S_raw;
    fa.psi = S.diagonal();
    fa.loadings = Eigen::MatrixXd::Zero(C, 0);
    fa.cov = fa.psi.asDiagonal();
    fa.loglik_trace.push_back(fa_loglik(S, fa.cov, static_cast<double>(n)));
    return fa;
  }

  // ML factor analysis is scale equivariant, so EM runs on the correlation
  // matrix; otherwise the initial factors latch onto the loudest channels.
  const Eigen::VectorXd sd = S_raw.diagonal().cwiseMax(1e-300).cwiseSqrt();
  const Eigen::VectorXd inv_sd = sd.cwiseInverse();
  const Eigen::MatrixXd S = inv_sd.asDiagonal() * S_raw * inv_sd.asDiagonal();
  const double log_det_scale = 2.0 * sd.array().log().sum();

  // Initialize from the leading eigenvectors (probabilistic PCA solution).
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
  const Eigen::VectorXd evals = eig.eigenvalues();  // ascending
  const double noise_level =
      std::max(evals.head(C - n_factors).mean(), 1e-12 * std::max(evals(C - 1), 1e-300));
  Eigen::MatrixXd B(C, n_factors);
  for (int f = 0; f < n_factors; ++f) {
    const Eigen::Index idx = C - 1 - f;
    B.col(f) = eig.eigenvectors().col(idx) * std::sqrt(std::max(evals(idx) - noise_level, 1e-6 * noise_level));
  }
  const Eigen::VectorXd psi_floor = (1e-8 * S.diagonal()).cwiseMax(1e-300);
  Eigen::VectorXd psi = (S.diagonal() - B.rowwise().squaredNorm()).cwiseMax(psi_floor);

  const double dn = static_cast<double>(n);
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n_factors, n_factors);
  Eigen::MatrixXd model = B * B.transpose();
  model.diagonal() += psi;
  // Log-likelihood in the original units.
  const double ll_shift = -0.5 * dn * log_det_scale;
  double ll = fa_loglik(S, model, dn) + ll_shift;
  fa.loglik_trace.push_back(ll);
  fa.converged = false;

  for (int it = 0; it < em_iters; ++it) {
    // E-step via the Woodbury identity to keep solves in the factor space.
    const Eigen::VectorXd psi_inv = psi.cwiseInverse();
    const Eigen::MatrixXd Bt_psi = B.transpose() * psi_inv.asDiagonal();  // q x C
    const Eigen::MatrixXd M = I + Bt_psi * B;
    const Eigen::MatrixXd beta = M.llt().solve(Bt_psi);  // q x C, = B' Sigma^{-1}
    const Eigen::MatrixXd betaS = beta * S;
    const Eigen::MatrixXd Ezz = I - beta * B + betaS * beta.transpose();
    // M-step.
    const Eigen::MatrixXd B_new = Ezz.llt().solve(betaS).transpose();
    Eigen::VectorXd psi_new = (S.diagonal() - (B_new * betaS).diagonal()).cwiseMax(psi_floor);

    B = B_new;
    psi = psi_new;
    model = B * B.transpose();
    model.diagonal() += psi;
    const double ll_new = fa_loglik(S, model, dn) + ll_shift;
    fa.loglik_trace.push_back(ll_new);
    fa.iterations = it + 1;
    const bool done = std::abs(ll_new - ll) <= tol * std::abs(ll);
    ll = ll_new;
    if (done) {
      fa.converged = true;
      break;
    }
  }
  fa.loadings = sd.asDiagonal() * B;
  fa.psi = psi.cwiseProduct(sd.cwiseAbs2());
  fa.cov = symmetrize(sd.asDiagonal() * model * sd.asDiagonal());
  return fa;
}

Eigen::MatrixXd shrink_to_diagonal(const Eigen::MatrixXd& cov, double lambda) {
  Eigen::MatrixXd out = (1.0 - lambda) * cov;
  out.diagonal() = cov.diagonal();
  return out;
}

Eigen::MatrixXd estimate_data_covariance(const Eigen::MatrixXd& samples, double lambda) {
  return shrink_to_diagonal(sample_covariance(samples), lambda);
}

Eigen::MatrixXd haufe_weights(const Eigen::MatrixXd& sigma_x, const Eigen::MatrixXd& pattern) {
  if (pattern.rows() != sigma_x.rows())
    throw Error(ErrorCode::ShapeMismatch, "pattern rows vs data covariance");
  const Cholesky chol = cholesky_with_jitter(sigma_x, "data covariance");
  return chol.solve(pattern);
}

double matrix_normal_logdensity(const Eigen::MatrixXd& a, const Eigen::MatrixXd& sigma_u,
                                const Eigen::MatrixXd& sigma_v) {
  if (sigma_u.rows() != a.rows() || sigma_v.rows() != a.cols())
    throw Error(ErrorCode::ShapeMismatch, "matrix-normal covariance shapes");
  const Cholesky cu = cholesky_with_jitter(sigma_u, "row covariance");
  const Cholesky cv = cholesky_with_jitter(sigma_v, "column covariance");
  // tr(V^{-1} A' U^{-1} A) = || Lu^{-1} A Lv^{-T} ||_F^2
  const Eigen::MatrixXd left = cu.llt.matrixL().solve(a);
  const Eigen::MatrixXd both = cv.llt.matrixL().solve(left.transpose());
  const double C = static_cast<double>(a.rows());
  const double K = static_cast<double>(a.cols());
  return -0.5 * C * K * std::log(2.0 * std::numbers::pi) - 0.5 * K * cu.log_det -
         0.5 * C * cv.log_det - 0.5 * both.squaredNorm();
}

MatrixNormalGrad matrix_normal_logdensity_grad(const Eigen::MatrixXd& a,
                                               const Eigen::MatrixXd& sigma_u,
                                               const Eigen::MatrixXd& sigma_v) {
  if (sigma_u.rows() != a.rows() || sigma_v.rows() != a.cols())
    throw Error(ErrorCode::ShapeMismatch, "matrix-normal covariance shapes");
  const Cholesky cu = cholesky_with_jitter(sigma_u, "row covariance");
  const Cholesky cv = cholesky_with_jitter(sigma_v, "column covariance");
  const double C = static_cast<double>(a.rows());
  const double K = static_cast<double>(a.cols());

  const Eigen::MatrixXd q = cu.solve(a);                            // U^{-1} A
  const Eigen::MatrixXd r = cv.solve(a.transpose()).transpose();    // A V^{-1}
  const Eigen::MatrixXd p = cv.solve(q.transpose()).transpose();    // U^{-1} A V^{-1}

  MatrixNormalGrad g;
  g.value = -0.5 * C * K * std::log(2.0 * std::numbers::pi) - 0.5 * K * cu.log_det -
            0.5 * C * cv.log_det - 0.5 * a.cwiseProduct(p).sum();
  g.d_a = -p;
  g.d_sigma_u = symmetrize(-0.5 * K * cu.inverse() + 0.5 * p * q.transpose());
  g.d_sigma_v = symmetrize(-0.5 * C * cv.inverse() + 0.5 * p.transpose() * r);
  return g;
}

CovarianceEstimate estimate_covariances(std::span<const Session> sessions,
                                        const ModalityShape& shape, int n_factors,
                                        double shrinkage) {
  const int pre = shape.stimulus_index;
  const int post = shape.samples - shape.stimulus_index;
  if (pre < 1)
    throw Error(ErrorCode::InsufficientData, shape.name + " has no pre-stimulus samples");
  if (post < 1)
    throw Error(ErrorCode::InsufficientData, shape.name + " has no post-stimulus samples");
  std::size_t trials = 0;
  for (const auto& s : sessions) trials += s.modality(shape.name).size();
  Eigen::MatrixXd pre_samples(shape.channels, static_cast<Eigen::Index>(trials) * pre);
  Eigen::MatrixXd post_samples(shape.channels, static_cast<Eigen::Index>(trials) * post);
  Eigen::Index t = 0;
  for (const auto& s : sessions)
    for (const auto& seg : s.modality(shape.name)) {
      pre_samples.middleCols(t * pre, pre) = seg.leftCols(pre);
      post_samples.middleCols(t * post, post) = seg.rightCols(post);
      ++t;
    }
  CovarianceEstimate est;
  est.shrinkage = shrinkage;
  est.pre_cov = sample_covariance(pre_samples);
  est.post_cov = sample_covariance(post_samples);
  est.data_cov = shrink_to_diagonal(est.post_cov, shrinkage);
  const int factors = std::min(n_factors, shape.channels - 1);
  const FactorAnalysis fa = estimate_noise_covariance(pre_samples, factors);
  est.noise_cov = fa.cov;
  est.noise_converged = fa.converged;
  return est;
}

}  // namespace usbl
