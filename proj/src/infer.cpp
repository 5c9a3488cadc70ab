#include "usbl/infer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "usbl/error.hpp"
#include "usbl/model.hpp"
#include "usbl/priors.hpp"
#include "usbl/rng.hpp"

namespace usbl {

void validate(const OptimizerSchedule& s) {
  if (!(s.lr_start > 0 && s.lr_end > 0 && s.lr_end <= s.lr_start))
    throw Error(ErrorCode::Usage, "learning rates must satisfy 0 < lr_end <= lr_start");
  if (s.steps < 1) throw Error(ErrorCode::Usage, "steps must be >= 1");
  if (!(s.grad_clip_norm > 0)) throw Error(ErrorCode::Usage, "clip norm must be > 0");
}

double lr_at(int step, const OptimizerSchedule& s) {
  return s.lr_start * std::pow(s.lr_end / s.lr_start, static_cast<double>(step) / s.steps);
}

void clip_by_global_norm(Eigen::VectorXd& g, double clip) {
  const double n = g.norm();
  if (n > clip) g *= clip / n;
}

void adam_step(Eigen::VectorXd& x, const Eigen::VectorXd& grad, AdamState& st, double lr,
               const OptimizerSchedule& s) {
  if (st.m.size() != x.size()) {
    st.m = Eigen::VectorXd::Zero(x.size());
    st.v = Eigen::VectorXd::Zero(x.size());
    st.count = 0;
  }
  ++st.count;
  st.m = s.beta1 * st.m + (1.0 - s.beta1) * grad;
  st.v = s.beta2 * st.v + (1.0 - s.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s.beta1, st.count);
  const double c2 = 1.0 - std::pow(s.beta2, st.count);
  x.array() -= lr * (st.m.array() / c1) / ((st.v.array() / c2).sqrt() + s.epsilon);
}

MapFit fit_map(const Objective& objective, const Eigen::VectorXd& init,
               const OptimizerSchedule& s) {
  validate(s);
  MapFit fit;
  fit.x = init;
  fit.trace.reserve(static_cast<std::size_t>(s.steps));
  AdamState st;
  Eigen::VectorXd g(init.size());
  for (int i = 0; i < s.steps; ++i) {
    const double f = objective(fit.x, g);
    if (!std::isfinite(f) || !g.allFinite())
      throw Error(ErrorCode::NonFinite, "objective or gradient at step " + std::to_string(i));
    fit.trace.push_back(f);
    clip_by_global_norm(g, s.grad_clip_norm);
    adam_step(fit.x, g, st, lr_at(i, s), s);
  }
  return fit;
}

LaplaceDiag laplace_diag(const ValueFn& f, const Eigen::VectorXd& mode, double floor) {
  LaplaceDiag out;
  out.mode = mode;
  out.precision.resize(mode.size());
  const double f0 = f(mode);
  Eigen::VectorXd x = mode;
  for (Eigen::Index i = 0; i < mode.size(); ++i) {
    const double h = 1e-4 * std::max(1.0, std::abs(mode(i)));
    x(i) = mode(i) + h;
    const double fp = f(x);
    x(i) = mode(i) - h;
    const double fm = f(x);
    x(i) = mode(i);
    const double curv = (fp - 2.0 * f0 + fm) / (h * h);
    if (!std::isfinite(curv) || curv <= 0) out.flagged.push_back(static_cast<int>(i));
    out.precision(i) = std::isfinite(curv) ? std::max(curv, floor) : floor;
  }
  return out;
}

double OmegaPosterior::median() const {
  if (samples.empty()) return 0.0;
  std::vector<double> s = samples;
  const auto mid = s.size() / 2;
  std::nth_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid), s.end());
  if (s.size() % 2 == 1) return s[mid];
  const double hi = s[mid];
  const double lo = *std::max_element(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

double OmegaPosterior::mean() const {
  if (samples.empty()) return 0.0;
  return std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
}

double omega_log_target(std::span<const LogitLabel> data, double prior_scale, double u) {
  const double omega = std::exp(u);
  double lp = half_logdensity(HalfKind::Cauchy, prior_scale, omega) + u;
  for (const auto& d : data) {
    const double a = omega * d.z;
    lp += d.y * a - softplus(a);
  }
  return lp;
}

OmegaPosterior sample_omega(std::span<const LogitLabel> data, double prior_scale,
                            const MCMCConfig& cfg) {
  if (data.empty()) throw Error(ErrorCode::InsufficientData, "omega needs >= 1 (z, y) pair");
  if (cfg.warmup < 1 || cfg.samples < 1) throw Error(ErrorCode::Usage, "warmup and samples must be >= 1");
  OmegaPosterior out;
  out.degenerate = std::all_of(data.begin(), data.end(), [](const LogitLabel& d) { return d.z == 0.0; });

  Rng rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double u = 0.0;
  double lp = omega_log_target(data, prior_scale, u);
  double log_step = std::log(cfg.initial_step);
  int accepted = 0;
  out.samples.reserve(static_cast<std::size_t>(cfg.samples));
  for (int it = 0; it < cfg.warmup + cfg.samples; ++it) {
    const double prop = u + std::exp(log_step) * normal(rng);
    const double lp_prop = omega_log_target(data, prior_scale, prop);
    const double accept_prob = std::min(1.0, std::exp(lp_prop - lp));
    if (unif(rng) < accept_prob) {
      u = prop;
      lp = lp_prop;
      if (it >= cfg.warmup) ++accepted;
    }
    if (it < cfg.warmup) {
      // Robbins-Monro step-size adaptation toward the target acceptance rate.
      log_step += (accept_prob - cfg.target_acceptance) / std::pow(it + 1.0, 0.6);
    } else {
      out.samples.push_back(std::exp(u));
    }
  }
  out.step_size = std::exp(log_step);
  out.acceptance_rate = static_cast<double>(accepted) / cfg.samples;
  return out;
}

}  // namespace usbl
