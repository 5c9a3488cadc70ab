#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace usbl {

struct OptimizerSchedule {
  double lr_start = 0.01;
  double lr_end = 0.0025;
  int steps = 5000;
  double grad_clip_norm = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

void validate(const OptimizerSchedule& s);

/// Exponentially decayed learning rate: lr_start * (lr_end / lr_start)^(step / steps).
double lr_at(int step, const OptimizerSchedule& s);

/// Value and gradient of the function to minimize.
using Objective = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;
using ValueFn = std::function<double(const Eigen::VectorXd&)>;

/// Rescales g to norm `clip` when its norm exceeds it.
void clip_by_global_norm(Eigen::VectorXd& g, double clip);

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  int count = 0;
};

/// One Adam update applied in place; `grad` must already be clipped.
void adam_step(Eigen::VectorXd& x, const Eigen::VectorXd& grad, AdamState& state, double lr,
               const OptimizerSchedule& s);

struct MapFit {
  Eigen::VectorXd x;
  std::vector<double> trace;  // objective before each update
};

/// Runs exactly `steps` clipped Adam updates; update i uses lr_at(i).
MapFit fit_map(const Objective& objective, const Eigen::VectorXd& init,
               const OptimizerSchedule& s);

struct LaplaceDiag {
  Eigen::VectorXd mode;
  Eigen::VectorXd precision;  // >= floor
  std::vector<int> flagged;   // coordinates with non-positive or non-finite curvature
};

/// Central-difference second derivatives of f at the mode (f is the negative
/// log posterior), step 1e-4 * max(1, |x_i|), floored at `floor`.
LaplaceDiag laplace_diag(const ValueFn& f, const Eigen::VectorXd& mode, double floor = 1e-12);

struct MCMCConfig {
  int warmup = 500;
  int samples = 1000;
  double target_acceptance = 0.44;
  double initial_step = 1.0;
  std::uint64_t seed = 0;
};

struct OmegaPosterior {
  std::vector<double> samples;
  double acceptance_rate = 0.0;
  double step_size = 0.0;
  bool degenerate = false;  // every z_p was 0: posterior equals the prior

  double median() const;
  double mean() const;
};

struct LogitLabel {
  double z = 0.0;
  int y = 0;
};

/// Unnormalized log posterior of u = log(omega) (Jacobian included).
double omega_log_target(std::span<const LogitLabel> data, double prior_scale, double u);

/// Adaptive random-walk Metropolis on log(omega); adaptation stops after warmup.
OmegaPosterior sample_omega(std::span<const LogitLabel> data, double prior_scale,
                            const MCMCConfig& cfg);

}  // namespace usbl
