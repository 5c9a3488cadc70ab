#include "usbl/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "usbl/error.hpp"
#include "usbl/folds.hpp"
#include "usbl/linalg.hpp"
#include "usbl/metrics.hpp"
#include "usbl/model.hpp"

namespace usbl {

DScoreResult dscore(std::span<const RtTrial> trials, bool clamp) {
  if (trials.size() < 2) throw Error(ErrorCode::InsufficientData, "D-score needs >= 2 trials");
  double sum_i = 0, sum_c = 0, all = 0;
  int n_i = 0, n_c = 0;
  std::vector<double> rts;
  rts.reserve(trials.size());
  for (const auto& t : trials) {
    const double rt = clamp ? std::clamp(t.rt_ms, 300.0, 10000.0) : t.rt_ms;
    if (!std::isfinite(rt)) throw Error(ErrorCode::NonFinite, "non-finite reaction time");
    rts.push_back(rt);
    all += rt;
    if (t.condition == Condition::Incongruent) {
      sum_i += rt;
      ++n_i;
    } else {
      sum_c += rt;
      ++n_c;
    }
  }
  if (n_i == 0 || n_c == 0) throw Error(ErrorCode::OneConditionOnly, "D-score needs both conditions");
  const double mean = all / static_cast<double>(rts.size());
  double ss = 0;
  for (double rt : rts) ss += (rt - mean) * (rt - mean);
  DScoreResult out;
  out.mean_incongruent = sum_i / n_i;
  out.mean_congruent = sum_c / n_c;
  out.pooled_sd = std::sqrt(ss / static_cast<double>(rts.size() - 1));
  if (!(out.pooled_sd > 0)) throw Error(ErrorCode::DegenerateRT, "reaction times have zero spread");
  out.d = (out.mean_incongruent - out.mean_congruent) / out.pooled_sd;
  return out;
}

int dscore_classify(double d, double threshold) { return d > threshold ? 1 : 0; }

std::vector<RtTrial> session_rt_trials(const Session& session, const std::string& modality) {
  const auto& segs = session.modality(modality);
  std::vector<RtTrial> out(segs.size());
  for (std::size_t t = 0; t < segs.size(); ++t) out[t] = {segs[t].mean(), session.conditions[t]};
  return out;
}

std::vector<int> recode_labels(int y, std::span<const Condition> conditions) {
  if (y != 0 && y != 1) throw Error(ErrorCode::LabelMissing, "recoding needs a 0/1 label");
  std::vector<int> out(conditions.size());
  for (std::size_t t = 0; t < conditions.size(); ++t)
    out[t] = conditions[t] == Condition::Congruent ? y : 1 - y;
  return out;
}

std::vector<int> unrecode_labels(std::span<const int> recoded, std::span<const Condition> conditions) {
  if (recoded.size() != conditions.size())
    throw Error(ErrorCode::ConditionLengthMismatch, "labels and conditions differ in length");
  std::vector<int> out(recoded.size());
  for (std::size_t t = 0; t < recoded.size(); ++t)
    out[t] = conditions[t] == Condition::Congruent ? recoded[t] : 1 - recoded[t];
  return out;
}

std::vector<double> unrecode_predictions(std::span<const double> p_congruent,
                                         std::span<const Condition> conditions) {
  if (p_congruent.size() != conditions.size())
    throw Error(ErrorCode::ConditionLengthMismatch, "predictions and conditions differ in length");
  std::vector<double> out(p_congruent.size());
  for (std::size_t t = 0; t < out.size(); ++t)
    out[t] = conditions[t] == Condition::Congruent ? p_congruent[t] : 1.0 - p_congruent[t];
  return out;
}

WindowSet window_set(WindowKind kind) {
  WindowSet ws;
  ws.kind = kind;
  ws.windows = {{-0.05, 0.05}, {0.05, 0.2}, {0.2, 0.3}, {0.3, 0.4}, {0.4, 0.5}};
  if (kind == WindowKind::Long) {
    ws.windows.insert(ws.windows.begin(), {-0.2, -0.05});
    ws.windows.insert(ws.windows.begin() + 2, {0.0, 0.05});
    ws.windows.push_back({0.5, 0.7});
    ws.windows.push_back({0.7, 1.0});
  }
  return ws;
}

Eigen::VectorXd window_features(const Segment& segment, const WindowSet& windows,
                                const ModalityShape& shape) {
  if (segment.rows() != shape.channels || segment.cols() != shape.samples)
    throw Error(ErrorCode::ShapeMismatch, "segment does not match modality '" + shape.name + "'");
  const int nw = static_cast<int>(windows.windows.size());
  Eigen::VectorXd out(shape.channels * nw);
  constexpr double eps = 1e-9;
  for (int w = 0; w < nw; ++w) {
    const auto [start, end] = windows.windows[w];
    if (!(start < end)) throw Error(ErrorCode::DomainError, "window start must precede its end");
    int first = -1, count = 0;
    for (int i = 0; i < shape.samples; ++i) {
      const double t = shape.sample_time(i);
      if (t >= start - eps && t < end - eps) {
        if (first < 0) first = i;
        ++count;
      }
    }
    if (count == 0)
      throw Error(ErrorCode::WindowOutOfRange, "window [" + std::to_string(start) + ", " +
                                                   std::to_string(end) + ") holds no sample of '" +
                                                   shape.name + "'");
    const Eigen::VectorXd means = segment.middleCols(first, count).rowwise().mean();
    for (int c = 0; c < shape.channels; ++c) out[c * nw + w] = means[c];
  }
  return out;
}

ShrunkCovariance ledoit_wolf(const Eigen::MatrixXd& samples) {
  const Eigen::Index n = samples.rows();
  const Eigen::Index p = samples.cols();
  if (n < 2) throw Error(ErrorCode::InsufficientData, "Ledoit-Wolf needs >= 2 samples");
  const Eigen::MatrixXd x = samples.rowwise() - samples.colwise().mean();
  const Eigen::MatrixXd s = x.transpose() * x / static_cast<double>(n);
  const double mu = s.trace() / static_cast<double>(p);
  const double delta = (s - mu * Eigen::MatrixXd::Identity(p, p)).squaredNorm() / static_cast<double>(p);
  const double fourth = x.rowwise().squaredNorm().array().square().sum();
  double beta = (fourth / static_cast<double>(n) - s.squaredNorm()) /
                (static_cast<double>(p) * static_cast<double>(n));
  ShrunkCovariance out;
  if (delta <= 0.0) {
    out.shrinkage = 1.0;
  } else {
    beta = std::clamp(beta, 0.0, delta);
    out.shrinkage = beta / delta;
  }
  out.cov = (1.0 - out.shrinkage) * s;
  out.cov.diagonal().array() += out.shrinkage * mu;
  return out;
}

namespace {

void check_binary(std::span<const int> labels, Eigen::Index rows) {
  if (static_cast<Eigen::Index>(labels.size()) != rows)
    throw Error(ErrorCode::ShapeMismatch, "features and labels differ in length");
  bool seen[2] = {false, false};
  for (int y : labels) {
    if (y != 0 && y != 1) throw Error(ErrorCode::LabelMissing, "labels must be 0/1");
    seen[y] = true;
  }
  if (!seen[0] || !seen[1])
    throw Error(ErrorCode::StratificationFailure, "both classes must be present");
}

}  // namespace

SLDAModel fit_slda(const Eigen::MatrixXd& features, std::span<const int> labels,
                   double forced_shrinkage) {
  check_binary(labels, features.rows());
  const Eigen::Index p = features.cols();
  Eigen::VectorXd mu[2] = {Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p)};
  int count[2] = {0, 0};
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    mu[labels[i]] += features.row(i).transpose();
    ++count[labels[i]];
  }
  mu[0] /= count[0];
  mu[1] /= count[1];
  Eigen::MatrixXd centered(features.rows(), p);
  for (Eigen::Index i = 0; i < features.rows(); ++i)
    centered.row(i) = features.row(i) - mu[labels[i]].transpose();

  SLDAModel model;
  Eigen::MatrixXd cov;
  if (forced_shrinkage >= 0.0) {
    const Eigen::MatrixXd s = centered.transpose() * centered / static_cast<double>(features.rows());
    model.shrinkage = std::min(forced_shrinkage, 1.0);
    cov = (1.0 - model.shrinkage) * s;
    cov.diagonal().array() += model.shrinkage * s.trace() / static_cast<double>(p);
  } else {
    auto lw = ledoit_wolf(centered);
    model.shrinkage = lw.shrinkage;
    cov = std::move(lw.cov);
  }
  const Cholesky chol = cholesky_with_jitter(cov, "shrinkage LDA covariance");
  model.weights = chol.solve(mu[1] - mu[0]);
  model.bias = -0.5 * model.weights.dot(mu[1] + mu[0]);
  return model;
}

double predict_slda(const SLDAModel& model, const Eigen::VectorXd& x) { return model.score(x); }

std::vector<double> default_ridge_grid() { return {1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0}; }

namespace {

double ridge_objective(const Eigen::MatrixXd& x, std::span<const int> y, double c,
                       const Eigen::VectorXd& w, double b) {
  const Eigen::VectorXd eta = (x * w).array() + b;
  double loss = 0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) loss += softplus(eta[i]) - y[i] * eta[i];
  return 0.5 * w.squaredNorm() + c * loss;
}

}  // namespace

LinearScorer solve_ridge_logistic(const Eigen::MatrixXd& x, std::span<const int> y, double c,
                                  const LinearScorer* warm_start) {
  if (!(c > 0)) throw Error(ErrorCode::DomainError, "inverse regularization must be > 0");
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  LinearScorer s;
  if (warm_start && warm_start->weights.size() == p) {
    s = *warm_start;
  } else {
    s.weights = Eigen::VectorXd::Zero(p);
    s.bias = 0.0;
  }
  Eigen::VectorXd yv(n);
  for (Eigen::Index i = 0; i < n; ++i) yv[i] = y[i];
  double f = ridge_objective(x, y, c, s.weights, s.bias);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::VectorXd eta = (x * s.weights).array() + s.bias;
    Eigen::VectorXd prob(n), curv(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      prob[i] = logistic(eta[i]);
      curv[i] = prob[i] * (1.0 - prob[i]);
    }
    const Eigen::VectorXd resid = prob - yv;
    Eigen::VectorXd grad(p + 1);
    grad.head(p) = s.weights + c * (x.transpose() * resid);
    grad[p] = c * resid.sum();
    if (grad.lpNorm<Eigen::Infinity>() < 1e-9 * std::max(1.0, c * static_cast<double>(n))) break;

    Eigen::MatrixXd h(p + 1, p + 1);
    const Eigen::MatrixXd wx = curv.asDiagonal() * x;
    h.topLeftCorner(p, p) = c * (x.transpose() * wx);
    h.topLeftCorner(p, p).diagonal().array() += 1.0;
    h.block(0, p, p, 1) = c * wx.colwise().sum().transpose();
    h.block(p, 0, 1, p) = h.block(0, p, p, 1).transpose();
    h(p, p) = c * curv.sum() + 1e-10;
    const Eigen::VectorXd step = h.ldlt().solve(grad);

    double t = 1.0;
    bool improved = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Eigen::VectorXd w_new = s.weights - t * step.head(p);
      const double b_new = s.bias - t * step[p];
      const double f_new = ridge_objective(x, y, c, w_new, b_new);
      if (f_new <= f - 1e-4 * t * grad.dot(step)) {
        s.weights = w_new;
        s.bias = b_new;
        improved = f - f_new > 1e-14 * std::max(1.0, std::abs(f));
        f = f_new;
        break;
      }
      t *= 0.5;
    }
    if (!improved) break;
  }
  if (!s.weights.allFinite() || !std::isfinite(s.bias))
    throw Error(ErrorCode::NonFinite, "ridge logistic regression diverged");
  return s;
}

RidgeLRModel fit_ridge_lr(const Eigen::MatrixXd& features, std::span<const int> labels,
                          std::span<const int> groups, std::span<const int> group_labels,
                          std::span<const double> grid, int nested_folds, std::uint64_t seed) {
  check_binary(labels, features.rows());
  if (grid.empty()) throw Error(ErrorCode::Usage, "regularization grid is empty");
  const Eigen::Index n = features.rows();
  std::vector<int> own_groups, own_labels;
  if (groups.empty()) {
    own_groups.resize(n);
    std::iota(own_groups.begin(), own_groups.end(), 0);
    own_labels.assign(labels.begin(), labels.end());
    groups = own_groups;
    group_labels = own_labels;
  }
  if (static_cast<Eigen::Index>(groups.size()) != n)
    throw Error(ErrorCode::ShapeMismatch, "one group index per row required");

  RidgeLRModel model;
  model.grid.assign(grid.begin(), grid.end());
  model.nested_loglik.assign(grid.size(), 0.0);
  std::vector<std::vector<double>> held_scores(grid.size(), std::vector<double>(n, 0.0));

  CVConfig cv;
  cv.k = nested_folds;
  cv.r = 1;
  cv.seed = seed;
  const FoldAssignment folds = make_folds(group_labels, cv);
  std::vector<int> fold_of_group(group_labels.size());
  for (const auto& f : folds.folds)
    for (int g : f.test) fold_of_group[g] = f.fold;

  for (const auto& f : folds.folds) {
    std::vector<Eigen::Index> tr, te;
    for (Eigen::Index i = 0; i < n; ++i) (fold_of_group[groups[i]] == f.fold ? te : tr).push_back(i);
    Eigen::MatrixXd xtr(tr.size(), features.cols());
    std::vector<int> ytr(tr.size());
    for (std::size_t i = 0; i < tr.size(); ++i) {
      xtr.row(i) = features.row(tr[i]);
      ytr[i] = labels[tr[i]];
    }
    check_binary(ytr, xtr.rows());
    LinearScorer warm;
    for (std::size_t g = 0; g < grid.size(); ++g) {
      warm = solve_ridge_logistic(xtr, ytr, grid[g], g == 0 ? nullptr : &warm);
      for (Eigen::Index i : te) {
        const double z = warm.score(features.row(i).transpose());
        held_scores[g][i] = z;
        model.nested_loglik[g] -= softplus(z) - labels[i] * z;
      }
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g)
    if (model.nested_loglik[g] > model.nested_loglik[best]) best = g;
  model.c = grid[best];
  model.nested_auc = auc(held_scores[best], labels).value_or(0.5);
  static_cast<LinearScorer&>(model) = solve_ridge_logistic(features, labels, model.c);
  return model;
}

Eigen::MatrixXd trial_features(const Session& session, const Dataset& schema,
                               const BaselineConfig& cfg) {
  const int trials = session.trial_count();
  std::vector<Eigen::MatrixXd> blocks;
  Eigen::Index width = 0;
  for (const auto& name : cfg.modalities) {
    const ModalityShape& shape = schema.shape(name);
    const auto& segs = session.modality(name);
    Eigen::MatrixXd block;
    if (cfg.kind == BaselineKind::Slda) {
      const WindowSet ws = window_set(name == "eeg" ? WindowKind::Short : cfg.non_eeg_windows);
      block.resize(trials, shape.channels * static_cast<Eigen::Index>(ws.windows.size()));
      for (int t = 0; t < trials; ++t) block.row(t) = window_features(segs[t], ws, shape).transpose();
    } else {
      block.resize(trials, shape.channels * shape.samples);
      for (int t = 0; t < trials; ++t) {
        const Eigen::MatrixXd rowmajor = segs[t].transpose();
        block.row(t) = Eigen::Map<const Eigen::RowVectorXd>(rowmajor.data(), rowmajor.size());
      }
    }
    width += block.cols();
    blocks.push_back(std::move(block));
  }
  Eigen::MatrixXd out(trials, width);
  Eigen::Index col = 0;
  for (const auto& b : blocks) {
    out.middleCols(col, b.cols()) = b;
    col += b.cols();
  }
  return out;
}

double aggregate_session_logit(std::span<const double> trial_scores,
                               std::span<const Condition> conditions, BaselineMode mode,
                               double clamp) {
  if (trial_scores.size() != conditions.size())
    throw Error(ErrorCode::ConditionLengthMismatch, "scores and conditions differ in length");
  if (trial_scores.empty()) throw Error(ErrorCode::InsufficientData, "session has no trials");
  double sum = 0;
  for (std::size_t t = 0; t < trial_scores.size(); ++t) {
    double s = trial_scores[t];
    // logit(1 - p) = -logit(p) on incongruent trials.
    if (mode == BaselineMode::Recoded && conditions[t] == Condition::Incongruent) s = -s;
    sum += std::clamp(s, -clamp, clamp);
  }
  return sum / static_cast<double>(trial_scores.size());
}

BaselineFit fit_baseline(const Dataset& train, const BaselineConfig& cfg, std::uint64_t seed) {
  if (cfg.modalities.empty()) throw Error(ErrorCode::Usage, "baseline needs >= 1 modality");
  std::vector<Eigen::MatrixXd> blocks;
  std::vector<int> labels, groups, group_labels;
  Eigen::Index rows = 0;
  for (std::size_t s = 0; s < train.sessions.size(); ++s) {
    const Session& session = train.sessions[s];
    if (!session.label) throw Error(ErrorCode::LabelMissing, "training session '" + session.participant_id + "' is unlabeled");
    blocks.push_back(trial_features(session, train, cfg));
    rows += blocks.back().rows();
    const std::vector<int> trial_labels =
        cfg.mode == BaselineMode::Recoded ? recode_labels(*session.label, session.conditions)
                                          : std::vector<int>(session.conditions.size(), *session.label);
    labels.insert(labels.end(), trial_labels.begin(), trial_labels.end());
    groups.insert(groups.end(), trial_labels.size(), static_cast<int>(s));
    group_labels.push_back(*session.label);
  }
  if (blocks.empty()) throw Error(ErrorCode::InsufficientData, "no training sessions");
  Eigen::MatrixXd x(rows, blocks.front().cols());
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    x.middleRows(r, b.rows()) = b;
    r += b.rows();
  }

  BaselineFit fit;
  fit.config = cfg;
  if (cfg.kind == BaselineKind::Slda) {
    SLDAModel m = fit_slda(x, labels);
    fit.shrinkage = m.shrinkage;
    fit.scorer = m;
  } else {
    RidgeLRModel m = fit_ridge_lr(x, labels, groups, group_labels, cfg.ridge_grid, cfg.nested_folds, seed);
    fit.ridge_c = m.c;
    fit.scorer = m;
  }
  return fit;
}

double baseline_session_logit(const BaselineFit& fit, const Dataset& schema, const Session& session) {
  const Eigen::MatrixXd x = trial_features(session, schema, fit.config);
  const Eigen::VectorXd scores = (x * fit.scorer.weights).array() + fit.scorer.bias;
  return aggregate_session_logit(std::span<const double>(scores.data(), scores.size()),
                                 session.conditions, fit.config.mode, fit.config.logit_clamp);
}

std::vector<double> run_baseline(const Dataset& train, const Dataset& test,
                                 const BaselineConfig& cfg, std::uint64_t seed) {
  const BaselineFit fit = fit_baseline(train, cfg, seed);
  std::vector<double> out;
  out.reserve(test.sessions.size());
  for (const auto& s : test.sessions) out.push_back(logistic(baseline_session_logit(fit, test, s)));
  return out;
}

}  // namespace usbl
