#include "usbl/model.hpp"

#include <cmath>
#include <sstream>

#include "usbl/error.hpp"
#include "usbl/leadfield.hpp"
#include "usbl/linalg.hpp"
#include "usbl/rng.hpp"

namespace usbl {

const char* prior_kind_name(PriorKind kind) {
  switch (kind) {
    case PriorKind::EegDugh: return "eeg-dugh";
    case PriorKind::EegLowRank: return "eeg-lowrank";
    case PriorKind::HorseshoeGrw: return "horseshoe-grw";
    case PriorKind::Horseshoe: return "horseshoe";
    case PriorKind::Gaussian: return "gaussian";
  }
  return "?";
}

PriorKind parse_prior_kind(const std::string& name) {
  for (auto k : {PriorKind::EegDugh, PriorKind::EegLowRank, PriorKind::HorseshoeGrw,
                 PriorKind::Horseshoe, PriorKind::Gaussian})
    if (name == prior_kind_name(k)) return k;
  throw Error(ErrorCode::Usage, "unknown prior kind: " + name);
}

PriorKind default_prior_for(const std::string& modality) {
  if (modality == "eeg") return PriorKind::EegDugh;
  if (modality == "gaze" || modality == "fau") return PriorKind::HorseshoeGrw;
  if (modality == "dyn") return PriorKind::Horseshoe;
  return PriorKind::Gaussian;
}

bool ModelConfig::includes_eeg() const {
  for (const auto& m : modalities)
    if (m.prior == PriorKind::EegDugh || m.prior == PriorKind::EegLowRank) return true;
  return false;
}

Eigen::Index ModalityLayout::weight_count() const {
  return spec.prior == PriorKind::EegLowRank ? Eigen::Index(channels) * groups
                                             : Eigen::Index(channels) * samples;
}

ParameterLayout make_layout(const ModelConfig& config,
                            const std::map<std::string, ModalityDims>& dims) {
  if (config.modalities.empty()) throw Error(ErrorCode::Usage, "model needs >= 1 modality");
  ParameterLayout layout;
  Eigen::Index off = 0;
  auto take = [&off](Eigen::Index n) {
    const Eigen::Index at = off;
    off += n;
    return at;
  };
  for (const auto& spec : config.modalities) {
    auto it = dims.find(spec.name);
    if (it == dims.end()) throw Error(ErrorCode::MissingModality, spec.name);
    ModalityLayout ml;
    ml.spec = spec;
    ml.channels = it->second.channels;
    ml.samples = it->second.samples;
    if (ml.channels < 1 || ml.samples < 1) throw Error(ErrorCode::ShapeMismatch, spec.name);
    ml.alpha = take(1);
    switch (spec.prior) {
      case PriorKind::EegDugh:
        if (it->second.regions < 1)
          throw Error(ErrorCode::ShapeMismatch, spec.name + ": source prior needs regions");
        ml.groups = it->second.regions;
        ml.weights = take(Eigen::Index(ml.channels) * ml.samples);
        ml.log_gamma = take(ml.groups);
        ml.log_sigma_i = take(1);
        break;
      case PriorKind::EegLowRank:
        ml.groups = std::max(1, std::min({config.lowrank_max_rank, ml.channels, ml.samples}));
        ml.weights = take(Eigen::Index(ml.channels) * ml.groups);
        ml.lr_b = take(ml.groups);
        ml.log_tau = take(1);
        ml.log_lambda = take(ml.groups);
        ml.lr_vt = take(Eigen::Index(ml.groups) * ml.samples);
        ml.log_sigma_i = take(1);
        break;
      case PriorKind::HorseshoeGrw:
        ml.weights = take(Eigen::Index(ml.channels) * ml.samples);
        ml.log_tau = take(1);
        ml.log_lambda = take(ml.channels);
        ml.log_sigma_i = take(1);
        break;
      case PriorKind::Horseshoe:
        ml.weights = take(Eigen::Index(ml.channels) * ml.samples);
        ml.log_tau = take(1);
        ml.log_lambda = take(ml.channels);
        break;
      case PriorKind::Gaussian:
        ml.weights = take(Eigen::Index(ml.channels) * ml.samples);
        break;
    }
    layout.modalities.push_back(ml);
  }
  layout.size = off;
  return layout;
}

std::string ParameterLayout::name_of(Eigen::Index i) const {
  for (const auto& ml : modalities) {
    auto in = [i](Eigen::Index at, Eigen::Index n) { return at >= 0 && i >= at && i < at + n; };
    std::ostringstream os;
    os << ml.spec.name << '.';
    if (in(ml.alpha, 1)) return os.str() + "alpha";
    if (in(ml.weights, ml.weight_count())) {
      const char* w = ml.spec.prior == PriorKind::EegDugh      ? "A"
                      : ml.spec.prior == PriorKind::EegLowRank ? "U"
                      : ml.spec.prior == PriorKind::Gaussian   ? "w"
                                                               : "beta";
      os << w << '[' << (i - ml.weights) << ']';
      return os.str();
    }
    if (in(ml.log_tau, 1)) return os.str() + "log_tau";
    if (in(ml.log_lambda, ml.spec.prior == PriorKind::EegLowRank ? ml.groups : ml.channels)) {
      os << "log_lambda[" << (i - ml.log_lambda) << ']';
      return os.str();
    }
    if (in(ml.log_sigma_i, 1)) return os.str() + "log_sigma_i";
    if (in(ml.log_gamma, ml.groups)) {
      os << "log_gamma[" << (i - ml.log_gamma) << ']';
      return os.str();
    }
    if (in(ml.lr_b, ml.groups)) {
      os << "b[" << (i - ml.lr_b) << ']';
      return os.str();
    }
    if (in(ml.lr_vt, Eigen::Index(ml.groups) * ml.samples)) {
      os << "Vt[" << (i - ml.lr_vt) << ']';
      return os.str();
    }
  }
  return "param[" + std::to_string(i) + "]";
}

namespace {

Eigen::Map<const Eigen::MatrixXd> block(const Eigen::VectorXd& x, Eigen::Index at, int rows,
                                        int cols) {
  return Eigen::Map<const Eigen::MatrixXd>(x.data() + at, rows, cols);
}

void put(Eigen::VectorXd& x, Eigen::Index at, const Eigen::MatrixXd& m) {
  Eigen::Map<Eigen::MatrixXd>(x.data() + at, m.rows(), m.cols()) = m;
}

int lambda_count(const ModalityLayout& ml) {
  return ml.spec.prior == PriorKind::EegLowRank ? ml.groups : ml.channels;
}

}  // namespace

ModelParameters unpack(const ParameterLayout& layout, const Eigen::VectorXd& x) {
  if (x.size() != layout.size) throw Error(ErrorCode::ShapeMismatch, "parameter vector size");
  ModelParameters p;
  for (const auto& ml : layout.modalities) {
    ModalityParams mp;
    mp.alpha = x(ml.alpha);
    const int cols = ml.spec.prior == PriorKind::EegLowRank ? ml.groups : ml.samples;
    mp.weights = block(x, ml.weights, ml.channels, cols);
    if (ml.log_tau >= 0) mp.tau = std::exp(x(ml.log_tau));
    if (ml.log_lambda >= 0) mp.lambda = x.segment(ml.log_lambda, lambda_count(ml)).array().exp();
    if (ml.log_sigma_i >= 0) mp.sigma_i = std::exp(x(ml.log_sigma_i));
    if (ml.log_gamma >= 0) mp.gamma = x.segment(ml.log_gamma, ml.groups).array().exp();
    if (ml.lr_b >= 0) mp.lr_b = x.segment(ml.lr_b, ml.groups);
    if (ml.lr_vt >= 0) mp.lr_vt = block(x, ml.lr_vt, ml.groups, ml.samples);
    p.modalities.push_back(std::move(mp));
  }
  return p;
}

Eigen::VectorXd pack(const ParameterLayout& layout, const ModelParameters& p) {
  if (p.modalities.size() != layout.modalities.size())
    throw Error(ErrorCode::ShapeMismatch, "parameter blocks vs layout");
  Eigen::VectorXd x = Eigen::VectorXd::Zero(layout.size);
  for (std::size_t m = 0; m < p.modalities.size(); ++m) {
    const auto& ml = layout.modalities[m];
    const auto& mp = p.modalities[m];
    auto positive = [](double v, const char* what) {
      if (!(v > 0)) throw Error(ErrorCode::DomainError, std::string(what) + " must be > 0");
      return std::log(v);
    };
    x(ml.alpha) = mp.alpha;
    if (mp.weights.size() != ml.weight_count())
      throw Error(ErrorCode::ShapeMismatch, ml.spec.name + " weights");
    put(x, ml.weights, mp.weights);
    if (ml.log_tau >= 0) x(ml.log_tau) = positive(mp.tau, "tau");
    if (ml.log_lambda >= 0)
      for (int i = 0; i < lambda_count(ml); ++i)
        x(ml.log_lambda + i) = positive(mp.lambda(i), "lambda");
    if (ml.log_sigma_i >= 0) x(ml.log_sigma_i) = positive(mp.sigma_i, "sigma_i");
    if (ml.log_gamma >= 0)
      for (int i = 0; i < ml.groups; ++i) x(ml.log_gamma + i) = positive(mp.gamma(i), "gamma");
    if (ml.lr_b >= 0) x.segment(ml.lr_b, ml.groups) = mp.lr_b;
    if (ml.lr_vt >= 0) put(x, ml.lr_vt, mp.lr_vt);
  }
  return x;
}

Eigen::VectorXd initial_parameters(const ParameterLayout& layout, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> small(0.0, 0.01);
  Eigen::VectorXd x(layout.size);
  // Everything starts small-normal; the scale and alpha blocks are overwritten below.
  for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = small(rng);
  const double log01 = std::log(0.1);
  for (const auto& ml : layout.modalities) {
    x(ml.alpha) = 0.01;
    if (ml.log_tau >= 0) x(ml.log_tau) = log01;
    if (ml.log_lambda >= 0) x.segment(ml.log_lambda, lambda_count(ml)).setConstant(log01);
    if (ml.log_sigma_i >= 0) x(ml.log_sigma_i) = log01;
    if (ml.log_gamma >= 0) x.segment(ml.log_gamma, ml.groups).setConstant(log01);
  }
  return x;
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double predict_from_logit(double z, double omega) { return logistic(omega * z); }

namespace {

/// Matrix that multiplies the observed segment in the linear predictor, before
/// any data-covariance whitening.
Eigen::MatrixXd direct_weights(const ModalityLayout& ml, const ModalityParams& mp) {
  switch (ml.spec.prior) {
    case PriorKind::HorseshoeGrw:
    case PriorKind::Horseshoe:
      return assemble_horseshoe_weights({mp.tau, mp.lambda, mp.weights});
    case PriorKind::EegLowRank: {
      const Eigen::VectorXd s = mp.tau * mp.lambda.cwiseProduct(mp.lr_b);
      return mp.weights * s.asDiagonal() * mp.lr_vt;
    }
    case PriorKind::EegDugh:
    case PriorKind::Gaussian:
      return mp.weights;
  }
  return mp.weights;
}

}  // namespace

std::vector<Eigen::MatrixXd> assemble_weights(const ModelContext& ctx, const ModelParameters& p) {
  std::vector<Eigen::MatrixXd> out;
  for (std::size_t m = 0; m < ctx.layout.modalities.size(); ++m) {
    const auto& ml = ctx.layout.modalities[m];
    Eigen::MatrixXd w = direct_weights(ml, p.modalities.at(m));
    if (ml.spec.prior == PriorKind::EegDugh) {
      auto it = ctx.eeg.find(ml.spec.name);
      if (it == ctx.eeg.end())
        throw Error(ErrorCode::MissingModality, "no covariance context for " + ml.spec.name);
      w = haufe_weights(it->second.data_cov, w);
    }
    out.push_back(std::move(w));
  }
  return out;
}

double trial_logit(const ModelContext& ctx, const ModelParameters& p,
                   std::span<const Eigen::MatrixXd> weights, const Session& session, int t) {
  if (t < 0 || t >= session.trial_count()) throw Error(ErrorCode::DomainError, "trial index");
  double z = 0.0;
  for (std::size_t m = 0; m < ctx.layout.modalities.size(); ++m) {
    const auto& segs = session.modality(ctx.layout.modalities[m].spec.name);
    const auto& x = segs.at(static_cast<std::size_t>(t));
    if (x.rows() != weights[m].rows() || x.cols() != weights[m].cols())
      throw Error(ErrorCode::ShapeMismatch, ctx.layout.modalities[m].spec.name);
    z += p.modalities[m].alpha * x.cwiseProduct(weights[m]).sum();
  }
  return mirror_sign(session.conditions[static_cast<std::size_t>(t)]) * z;
}

double trial_logit(const ModelContext& ctx, const ModelParameters& p, const Session& session,
                   int t) {
  const auto w = assemble_weights(ctx, p);
  return trial_logit(ctx, p, w, session, t);
}

double session_logit(const ModelContext& ctx, const ModelParameters& p,
                     std::span<const Eigen::MatrixXd> weights, const Session& session) {
  const int T = session.trial_count();
  if (T < 1) throw Error(ErrorCode::InsufficientData, session.participant_id + " has no trials");
  double sum = 0.0;
  for (int t = 0; t < T; ++t) sum += trial_logit(ctx, p, weights, session, t);
  return p.omega * sum / T;
}

double session_logit(const ModelContext& ctx, const ModelParameters& p, const Session& session) {
  const auto w = assemble_weights(ctx, p);
  return session_logit(ctx, p, w, session);
}

Eigen::MatrixXd signed_mean(const Session& session, const std::string& modality) {
  const auto& segs = session.modality(modality);
  if (segs.empty()) throw Error(ErrorCode::InsufficientData, session.participant_id);
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(segs[0].rows(), segs[0].cols());
  for (std::size_t t = 0; t < segs.size(); ++t) acc += mirror_sign(session.conditions[t]) * segs[t];
  return acc / static_cast<double>(segs.size());
}

// ---------------------------------------------------------------------------
// Posterior

Posterior::Posterior(const ModelContext& ctx, std::span<const Session> sessions) : ctx_(ctx) {
  validate(ctx_.config.hyper);
  std::size_t n_obs = 0;
  for (const auto& s : sessions) {
    if (!s.label) throw Error(ErrorCode::LabelMissing, s.participant_id);
    n_obs += ctx_.config.likelihood == LikelihoodLevel::Session ? 1 : s.conditions.size();
  }
  if (n_obs == 0) throw Error(ErrorCode::InsufficientData, "no training observations");
  labels_.resize(static_cast<Eigen::Index>(n_obs));
  {
    Eigen::Index o = 0;
    for (const auto& s : sessions) {
      const std::size_t reps = ctx_.config.likelihood == LikelihoodLevel::Session ? 1 : s.conditions.size();
      for (std::size_t r = 0; r < reps; ++r) labels_(o++) = *s.label;
    }
  }

  for (const auto& ml : ctx_.layout.modalities) {
    std::optional<Cholesky> whiten;
    if (ml.spec.prior == PriorKind::EegDugh) {
      auto it = ctx_.eeg.find(ml.spec.name);
      if (it == ctx_.eeg.end())
        throw Error(ErrorCode::MissingModality, "no covariance context for " + ml.spec.name);
      const auto& e = it->second;
      if (e.data_cov.rows() != ml.channels || e.noise_cov.rows() != ml.channels ||
          static_cast<int>(e.grams.size()) != ml.groups)
        throw Error(ErrorCode::ShapeMismatch, "covariance context for " + ml.spec.name);
      whiten = cholesky_with_jitter(e.data_cov, "data covariance");
    }
    const Eigen::Index width = Eigen::Index(ml.channels) * ml.samples;
    Eigen::MatrixXd design(static_cast<Eigen::Index>(n_obs), width);
    Eigen::Index o = 0;
    auto emit = [&](Eigen::MatrixXd f) {
      if (f.rows() != ml.channels || f.cols() != ml.samples)
        throw Error(ErrorCode::ShapeMismatch, ml.spec.name);
      // <X, Sigma_X^{-1} A> = <Sigma_X^{-1} X, A> for symmetric Sigma_X.
      if (whiten) f = whiten->solve(f);
      design.row(o++) = Eigen::Map<const Eigen::RowVectorXd>(f.data(), width);
    };
    for (const auto& s : sessions) {
      if (ctx_.config.likelihood == LikelihoodLevel::Session) {
        emit(signed_mean(s, ml.spec.name));
      } else {
        const auto& segs = s.modality(ml.spec.name);
        for (std::size_t t = 0; t < segs.size(); ++t) emit(mirror_sign(s.conditions[t]) * segs[t]);
      }
    }
    design_.push_back(std::move(design));
  }
}

double Posterior::operator()(const Eigen::VectorXd& x) const { return evaluate(x, nullptr, nullptr); }

double Posterior::operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const {
  grad.setZero(x.size());
  return evaluate(x, &grad, nullptr);
}

std::vector<std::pair<std::string, double>> Posterior::terms(const Eigen::VectorXd& x) const {
  std::vector<std::pair<std::string, double>> out;
  evaluate(x, nullptr, &out);
  return out;
}

Eigen::VectorXd Posterior::logits(const Eigen::VectorXd& x) const {
  const ModelParameters p = unpack(ctx_.layout, x);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(labels_.size());
  for (std::size_t m = 0; m < design_.size(); ++m) {
    const auto& ml = ctx_.layout.modalities[m];
    const Eigen::MatrixXd d = direct_weights(ml, p.modalities[m]);
    z += p.modalities[m].alpha *
         (design_[m] * Eigen::Map<const Eigen::VectorXd>(d.data(), d.size()));
  }
  return p.omega * z;
}

namespace {

struct TermSink {
  std::vector<std::pair<std::string, double>>* terms;
  double total = 0.0;

  void add(const std::string& name, double v) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFinite, "log-posterior term " + name);
    total += v;
    if (terms) {
      for (auto& [n, acc] : *terms)
        if (n == name) {
          acc += v;
          return;
        }
      terms->emplace_back(name, v);
    }
  }
};

// Prior on a positive quantity stored as u = log(x): log p(e^u) + u.
double log_scale_term(HalfKind kind, double scale, double u, double df, double* d_u) {
  const double x = std::exp(u);
  if (d_u) *d_u += x * half_logdensity_dx(kind, scale, x, df) + 1.0;
  return half_logdensity(kind, scale, x, df) + u;
}

}  // namespace

double Posterior::evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad,
                           std::vector<std::pair<std::string, double>>* terms) const {
  if (x.size() != ctx_.layout.size) throw Error(ErrorCode::ShapeMismatch, "parameter vector size");
  if (!x.allFinite()) throw Error(ErrorCode::NonFinite, "parameter vector");
  const auto& hyper = ctx_.config.hyper;
  const double omega = 1.0;  // stage-1 fits keep the session evidence scale fixed
  const ModelParameters p = unpack(ctx_.layout, x);
  TermSink sink{terms};
  double* g = grad ? grad->data() : nullptr;

  // Linear predictor and Bernoulli likelihood.
  const auto M = ctx_.layout.modalities.size();
  std::vector<Eigen::MatrixXd> direct(M);
  std::vector<Eigen::VectorXd> u(M);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(labels_.size());
  for (std::size_t m = 0; m < M; ++m) {
    direct[m] = direct_weights(ctx_.layout.modalities[m], p.modalities[m]);
    u[m] = design_[m] * Eigen::Map<const Eigen::VectorXd>(direct[m].data(), direct[m].size());
    z += omega * p.modalities[m].alpha * u[m];
  }
  double ll = 0.0;
  Eigen::VectorXd resid(z.size());
  for (Eigen::Index o = 0; o < z.size(); ++o) {
    ll += labels_(o) * z(o) - softplus(z(o));
    resid(o) = labels_(o) - logistic(z(o));
  }
  sink.add("likelihood", ll);

  for (std::size_t m = 0; m < M; ++m) {
    const auto& ml = ctx_.layout.modalities[m];
    const auto& mp = p.modalities[m];
    const std::string& nm = ml.spec.name;
    const int C = ml.channels;
    const int K = ml.samples;

    sink.add(nm + ".alpha", normal_logdensity(mp.alpha, 0.0, hyper.alpha_prior_scale));
    Eigen::MatrixXd g_direct;
    if (grad) {
      g[ml.alpha] += omega * resid.dot(u[m]) -
                     mp.alpha / (hyper.alpha_prior_scale * hyper.alpha_prior_scale);
      const Eigen::VectorXd gd = omega * mp.alpha * (design_[m].transpose() * resid);
      g_direct = Eigen::Map<const Eigen::MatrixXd>(gd.data(), C, K);
    }

    switch (ml.spec.prior) {
      case PriorKind::Gaussian: {
        double lp = 0.0;
        for (Eigen::Index i = 0; i < mp.weights.size(); ++i)
          lp += normal_logdensity(mp.weights.data()[i], 0.0, 1.0);
        sink.add(nm + ".w", lp);
        if (grad) {
          Eigen::Map<Eigen::MatrixXd> gw(g + ml.weights, C, K);
          gw += g_direct - mp.weights;
        }
        break;
      }
      case PriorKind::Horseshoe:
      case PriorKind::HorseshoeGrw: {
        double d_tau = 0.0;
        Eigen::VectorXd d_lambda = Eigen::VectorXd::Zero(C);
        if (grad) {
          Eigen::Map<Eigen::MatrixXd> gb(g + ml.weights, C, K);
          gb += mp.tau * (mp.lambda.asDiagonal() * g_direct);
          const Eigen::MatrixXd gw_w = g_direct.cwiseProduct(direct[m]);
          d_tau = gw_w.sum();
          d_lambda = gw_w.rowwise().sum();
        }
        sink.add(nm + ".tau", log_scale_term(HalfKind::Cauchy, hyper.half_cauchy_scale_global,
                                             x(ml.log_tau), 0, grad ? &d_tau : nullptr));
        double lam = 0.0;
        for (int c = 0; c < C; ++c)
          lam += log_scale_term(HalfKind::Cauchy, hyper.half_cauchy_scale_local,
                                x(ml.log_lambda + c), 0, grad ? &d_lambda(c) : nullptr);
        sink.add(nm + ".lambda", lam);
        if (grad) {
          g[ml.log_tau] += d_tau;
          for (int c = 0; c < C; ++c) g[ml.log_lambda + c] += d_lambda(c);
        }
        if (ml.spec.prior == PriorKind::Horseshoe) {
          double lp = 0.0;
          for (Eigen::Index i = 0; i < mp.weights.size(); ++i)
            lp += normal_logdensity(mp.weights.data()[i], 0.0, 1.0);
          sink.add(nm + ".beta", lp);
          if (grad) Eigen::Map<Eigen::MatrixXd>(g + ml.weights, C, K) -= mp.weights;
        } else {
          const GRWParams grw{hyper.grw_intercept_scale, mp.sigma_i};
          double lp = 0.0;
          double d_si = 0.0;
          Eigen::VectorXd d_row(K);
          for (int c = 0; c < C; ++c) {
            const Eigen::VectorXd row = mp.weights.row(c).transpose();
            double d_si_row = 0.0;
            lp += grw_logdensity_grad(row, grw, d_row, d_si_row);
            d_si += d_si_row;
            if (grad) Eigen::Map<Eigen::MatrixXd>(g + ml.weights, C, K).row(c) += d_row.transpose();
          }
          sink.add(nm + ".beta", lp);
          double d_u = grad ? d_si * mp.sigma_i : 0.0;
          sink.add(nm + ".sigma_i",
                   log_scale_term(HalfKind::Normal, hyper.half_normal_scale_innovation,
                                  x(ml.log_sigma_i), 0, grad ? &d_u : nullptr));
          if (grad) g[ml.log_sigma_i] += d_u;
        }
        break;
      }
      case PriorKind::EegDugh: {
        const auto& e = ctx_.eeg.at(nm);
        const Eigen::MatrixXd sigma_u = build_spatial_covariance(e.grams, mp.gamma, e.noise_cov);
        const Eigen::MatrixXd sigma_v = grw_covariance(K, hyper.grw_intercept_scale, mp.sigma_i);
        const MatrixNormalGrad mn = matrix_normal_logdensity_grad(mp.weights, sigma_u, sigma_v);
        sink.add(nm + ".A", mn.value);
        double gam = 0.0;
        for (int r = 0; r < ml.groups; ++r) {
          double d_u = 0.0;
          gam += log_scale_term(HalfKind::StudentT, hyper.half_student_t_scale,
                                x(ml.log_gamma + r), hyper.half_student_t_df,
                                grad ? &d_u : nullptr);
          if (grad) {
            const double gr = mp.gamma(r);
            d_u += mn.d_sigma_u.cwiseProduct(e.grams[r]).sum() * 2.0 * gr * gr;
            g[ml.log_gamma + r] += d_u;
          }
        }
        sink.add(nm + ".gamma", gam);
        double d_u = 0.0;
        sink.add(nm + ".sigma_i",
                 log_scale_term(HalfKind::Normal, hyper.half_normal_scale_innovation,
                                x(ml.log_sigma_i), 0, grad ? &d_u : nullptr));
        if (grad) {
          double tr = 0.0;  // tr(dSigma_V . JJ'), (JJ')_{ij} = min(i, j) + 1
          for (int i = 0; i < K; ++i)
            for (int j = 0; j < K; ++j) tr += mn.d_sigma_v(i, j) * (std::min(i, j) + 1);
          d_u += tr * 2.0 * mp.sigma_i * mp.sigma_i;
          g[ml.log_sigma_i] += d_u;
          Eigen::Map<Eigen::MatrixXd>(g + ml.weights, C, K) += g_direct + mn.d_a;
        }
        break;
      }
      case PriorKind::EegLowRank: {
        const int R = ml.groups;
        const Eigen::VectorXd s = mp.tau * mp.lambda.cwiseProduct(mp.lr_b);
        double lp_u = 0.0;
        for (Eigen::Index i = 0; i < mp.weights.size(); ++i)
          lp_u += normal_logdensity(mp.weights.data()[i], 0.0, 1.0);
        sink.add(nm + ".U", lp_u);
        double lp_b = 0.0;
        for (int j = 0; j < R; ++j) lp_b += normal_logdensity(mp.lr_b(j), 0.0, 1.0);
        sink.add(nm + ".b", lp_b);

        Eigen::VectorXd g_s = Eigen::VectorXd::Zero(R);
        if (grad) {
          Eigen::Map<Eigen::MatrixXd> gU(g + ml.weights, C, R);
          gU += g_direct * mp.lr_vt.transpose() * s.asDiagonal() - mp.weights;
          Eigen::Map<Eigen::MatrixXd> gVt(g + ml.lr_vt, R, K);
          gVt += s.asDiagonal() * (mp.weights.transpose() * g_direct);
          g_s = (mp.weights.transpose() * g_direct * mp.lr_vt.transpose()).diagonal();
          for (int j = 0; j < R; ++j) g[ml.lr_b + j] += mp.tau * mp.lambda(j) * g_s(j) - mp.lr_b(j);
        }
        double d_tau = grad ? g_s.dot(s) : 0.0;
        sink.add(nm + ".tau", log_scale_term(HalfKind::Cauchy, hyper.half_cauchy_scale_global,
                                             x(ml.log_tau), 0, grad ? &d_tau : nullptr));
        if (grad) g[ml.log_tau] += d_tau;
        double lam = 0.0;
        for (int j = 0; j < R; ++j) {
          double d_l = grad ? g_s(j) * s(j) : 0.0;
          lam += log_scale_term(HalfKind::Cauchy, hyper.half_cauchy_scale_local,
                                x(ml.log_lambda + j), 0, grad ? &d_l : nullptr);
          if (grad) g[ml.log_lambda + j] += d_l;
        }
        sink.add(nm + ".lambda", lam);

        const GRWParams grw{hyper.grw_intercept_scale, mp.sigma_i};
        double lp_v = 0.0;
        double d_si = 0.0;
        Eigen::VectorXd d_row(K);
        for (int j = 0; j < R; ++j) {
          const Eigen::VectorXd row = mp.lr_vt.row(j).transpose();
          double d_si_row = 0.0;
          lp_v += grw_logdensity_grad(row, grw, d_row, d_si_row);
          d_si += d_si_row;
          if (grad) Eigen::Map<Eigen::MatrixXd>(g + ml.lr_vt, R, K).row(j) += d_row.transpose();
        }
        sink.add(nm + ".Vt", lp_v);
        double d_u = grad ? d_si * mp.sigma_i : 0.0;
        sink.add(nm + ".sigma_i",
                 log_scale_term(HalfKind::Normal, hyper.half_normal_scale_innovation,
                                x(ml.log_sigma_i), 0, grad ? &d_u : nullptr));
        if (grad) g[ml.log_sigma_i] += d_u;
        break;
      }
    }
  }
  if (grad && !grad->allFinite()) throw Error(ErrorCode::NonFinite, "log-posterior gradient");
  return sink.total;
}

}  // namespace usbl
