#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "usbl/dataset.hpp"
#include "usbl/priors.hpp"

namespace usbl {

enum class PriorKind { EegDugh, EegLowRank, HorseshoeGrw, Horseshoe, Gaussian };

const char* prior_kind_name(PriorKind kind);
PriorKind parse_prior_kind(const std::string& name);
/// eeg -> EegDugh, gaze/fau -> HorseshoeGrw, dyn -> Horseshoe, anything else -> Gaussian.
PriorKind default_prior_for(const std::string& modality);

/// Whether the Bernoulli likelihood is attached to session logits (default) or
/// to every trial logit with the session's label.
enum class LikelihoodLevel { Session, Trial };

struct ModalitySpec {
  std::string name;
  PriorKind prior = PriorKind::Gaussian;
};

struct ModelConfig {
  std::vector<ModalitySpec> modalities;
  HyperpriorConfig hyper;
  int lowrank_max_rank = 8;
  LikelihoodLevel likelihood = LikelihoodLevel::Session;
  double leadfield_kernel_multiplier = 2.0;
  int noise_factors = 5;
  double data_cov_shrinkage = 0.01;

  bool includes_eeg() const;
};

/// Offsets of each parameter block inside the flat unconstrained vector.
/// Positive quantities are stored as logarithms. -1 marks an absent block.
struct ModalityLayout {
  ModalitySpec spec;
  int channels = 0;
  int samples = 0;
  int groups = 0;  // regions (EegDugh) or rank (EegLowRank)
  Eigen::Index alpha = -1;
  Eigen::Index weights = -1;  // beta, A, w (C*K) or U (C*rank), column-major
  Eigen::Index log_tau = -1;
  Eigen::Index log_lambda = -1;  // C entries, or rank entries for EegLowRank
  Eigen::Index log_sigma_i = -1;
  Eigen::Index log_gamma = -1;
  Eigen::Index lr_b = -1;   // rank
  Eigen::Index lr_vt = -1;  // rank x K, column-major

  Eigen::Index weight_count() const;
};

struct ParameterLayout {
  std::vector<ModalityLayout> modalities;
  Eigen::Index size = 0;

  /// Human-readable name of flat index i, e.g. "eeg.A[3]".
  std::string name_of(Eigen::Index i) const;
};

struct ModalityDims {
  int channels = 0;
  int samples = 0;
  int regions = 0;  // EegDugh only
};

ParameterLayout make_layout(const ModelConfig& config,
                            const std::map<std::string, ModalityDims>& dims);

struct ModalityParams {
  double alpha = 0.0;
  Eigen::MatrixXd weights;  // beta / A / w / U depending on prior
  double tau = 1.0;
  Eigen::VectorXd lambda;
  double sigma_i = 0.1;
  Eigen::VectorXd gamma;
  Eigen::VectorXd lr_b;
  Eigen::MatrixXd lr_vt;  // rank x K
};

struct ModelParameters {
  std::vector<ModalityParams> modalities;  // same order as the layout
  double omega = 1.0;
};

ModelParameters unpack(const ParameterLayout& layout, const Eigen::VectorXd& x);
Eigen::VectorXd pack(const ParameterLayout& layout, const ModelParameters& p);

/// Raw weights and A from Normal(0, 0.01^2), log-scale positives at log(0.1),
/// alpha at 0.01.
Eigen::VectorXd initial_parameters(const ParameterLayout& layout, std::uint64_t seed);

/// Fixed, training-split quantities the EEG source prior and the Haufe
/// transform depend on.
struct EegContext {
  Eigen::MatrixXd data_cov;   // Sigma_X
  Eigen::MatrixXd noise_cov;  // Sigma_eps
  std::vector<Eigen::MatrixXd> grams;
};

struct ModelContext {
  ModelConfig config;
  ParameterLayout layout;
  std::map<std::string, EegContext> eeg;  // keyed by EegDugh modality name
};

/// Effective decoding matrices W^m applied to the observed segments, one per
/// layout modality. EEG source-prior modalities go through the Haufe solve.
std::vector<Eigen::MatrixXd> assemble_weights(const ModelContext& ctx, const ModelParameters& p);

/// z_t = sign(t) sum_m alpha_m <X^m_t, W^m>_F with sign +1 on incongruent trials.
double trial_logit(const ModelContext& ctx, const ModelParameters& p,
                   std::span<const Eigen::MatrixXd> weights, const Session& session, int t);
double trial_logit(const ModelContext& ctx, const ModelParameters& p, const Session& session,
                   int t);

/// z = (omega / T) sum_t z_t.
double session_logit(const ModelContext& ctx, const ModelParameters& p,
                     std::span<const Eigen::MatrixXd> weights, const Session& session);
double session_logit(const ModelContext& ctx, const ModelParameters& p, const Session& session);

double logistic(double z);
/// log(1 + exp(z)) without overflow.
double softplus(double z);

/// logistic(omega * z).
double predict_from_logit(double z, double omega);

/// Log posterior of the flat parameter vector given labeled sessions.
class Posterior {
 public:
  Posterior(const ModelContext& ctx, std::span<const Session> sessions);

  Eigen::Index dimension() const { return ctx_.layout.size; }
  const ModelContext& context() const { return ctx_; }

  double operator()(const Eigen::VectorXd& x) const;
  double operator()(const Eigen::VectorXd& x, Eigen::VectorXd& grad) const;

  /// Named additive terms (likelihood, per-prior), for diagnostics.
  std::vector<std::pair<std::string, double>> terms(const Eigen::VectorXd& x) const;

  /// Observation-level logits for the current parameters (one per session,
  /// or per trial under LikelihoodLevel::Trial).
  Eigen::VectorXd logits(const Eigen::VectorXd& x) const;

 private:
  double evaluate(const Eigen::VectorXd& x, Eigen::VectorXd* grad,
                  std::vector<std::pair<std::string, double>>* terms) const;

  ModelContext ctx_;
  std::vector<Eigen::MatrixXd> design_;  // per modality: observations x (C*K)
  Eigen::VectorXd labels_;
};

/// Signed trial average (1/T) sum_t sign(t) X_t of one modality.
Eigen::MatrixXd signed_mean(const Session& session, const std::string& modality);

}  // namespace usbl
