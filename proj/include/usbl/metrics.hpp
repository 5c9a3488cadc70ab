#pragma once

#include <optional>
#include <span>
#include <vector>

namespace usbl {

/// Mann-Whitney AUC; ties count one half. Empty when a class is absent.
std::optional<double> auc(std::span<const double> scores, std::span<const int> labels);

struct Confusion {
  std::optional<double> sensitivity;
  std::optional<double> specificity;
};

/// score >= threshold counts as a positive prediction.
Confusion confusion_metrics(std::span<const double> scores, std::span<const int> labels,
                            double threshold = 0.5);

double brier(std::span<const double> probs, std::span<const int> labels);
/// Mean negative log-likelihood with probabilities clamped to [1e-12, 1 - 1e-12].
double cross_entropy(std::span<const double> probs, std::span<const int> labels);

struct CorrectedTest {
  double mean = 0.0;
  double sd = 0.0;
  double variance_corrected = 0.0;
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  bool zero_variance = false;
};

/// Nadeau-Bengio corrected resampled t-test over k*r fold values:
/// var_corr = (1/(k r) + n2/n1) * s^2, df = k r - 1, two-sided p.
CorrectedTest corrected_ttest(std::span<const double> fold_values, int k, int r, double n1,
                              double n2, double null_value);

/// Paired variant on fold-wise differences a - b against 0.
CorrectedTest corrected_paired_ttest(std::span<const double> a, std::span<const double> b, int k,
                                     int r, double n1, double n2);

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

Interval corrected_ci(std::span<const double> fold_values, int k, int r, double n1, double n2,
                      double level = 0.95);

/// Two-sided Student-t quantile t_{df, level}.
double student_t_quantile(int df, double prob);
double normal_quantile(double prob);

struct FdrResult {
  std::vector<bool> rejected;
  std::vector<double> adjusted;
};

/// Benjamini-Hochberg step-up procedure.
FdrResult bh_fdr(std::span<const double> pvalues, double q);

/// Minimal detectable AUC: null + (z_{1-alpha/2} + z_power) sqrt((1/(kr) + n2/n1) sigma^2).
double mdes(double sigma_fold, int k, int r, double n1, double n2, double alpha = 0.05,
            double power = 0.8, double null_value = 0.5);

}  // namespace usbl
