#include "usbl/metrics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "usbl/error.hpp"

namespace usbl {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::ShapeMismatch, "scores and labels differ in length");
}

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores.size(), labels.size());
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Twice the Mann-Whitney U, accumulated in integers so it stays exact.
  long long twice_u = 0;
  long long negatives_below = 0;
  long long n_pos = 0;
  long long n_neg = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long tie_pos = 0, tie_neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tie_pos : tie_neg)++;
      ++j;
    }
    twice_u += tie_pos * (2 * negatives_below + tie_neg);
    negatives_below += tie_neg;
    n_pos += tie_pos;
    n_neg += tie_neg;
    i = j;
  }
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

Confusion confusion_metrics(std::span<const double> scores, std::span<const int> labels,
                            double threshold) {
  check_sizes(scores.size(), labels.size());
  int tp = 0, fn = 0, tn = 0, fp = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    if (labels[i] == 1)
      (pred ? tp : fn)++;
    else
      (pred ? fp : tn)++;
  }
  Confusion c;
  if (tp + fn > 0) c.sensitivity = static_cast<double>(tp) / (tp + fn);
  if (tn + fp > 0) c.specificity = static_cast<double>(tn) / (tn + fp);
  return c;
}

double brier(std::span<const double> probs, std::span<const int> labels) {
  check_sizes(probs.size(), labels.size());
  if (probs.empty()) throw Error(ErrorCode::InsufficientData, "brier of empty set");
  // Extended accumulator: means of identical terms come out exact.
  long double s = 0.0L;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double d = probs[i] - labels[i];
    s += d * d;
  }
  return static_cast<double>(s / static_cast<long double>(probs.size()));
}

double cross_entropy(std::span<const double> probs, std::span<const int> labels) {
  check_sizes(probs.size(), labels.size());
  if (probs.empty()) throw Error(ErrorCode::InsufficientData, "cross-entropy of empty set");
  long double s = 0.0L;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double p = std::clamp(probs[i], 1e-12, 1.0 - 1e-12);
    s -= labels[i] == 1 ? std::log(p) : std::log1p(-p);
  }
  return static_cast<double>(s / static_cast<long double>(probs.size()));
}

double student_t_quantile(int df, double prob) {
  return boost::math::quantile(boost::math::students_t(df), prob);
}

double normal_quantile(double prob) {
  return boost::math::quantile(boost::math::normal(), prob);
}

namespace {

struct Moments {
  double mean;
  double var;
};

Moments moments(std::span<const double> v) {
  if (v.size() < 2) throw Error(ErrorCode::InsufficientData, "need >= 2 fold values");
  const double n = static_cast<double>(v.size());
  // Constant input is exactly degenerate; summation rounding must not hide that.
  if (std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); })) return {v.front(), 0.0};
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, ss / (n - 1)};
}

double correction(int k, int r, double n1, double n2) {
  if (k < 1 || r < 1 || !(n1 > 0) || n2 < 0)
    throw Error(ErrorCode::DomainError, "invalid k, r, n1 or n2");
  return 1.0 / (static_cast<double>(k) * r) + n2 / n1;
}

}  // namespace

CorrectedTest corrected_ttest(std::span<const double> fold_values, int k, int r, double n1,
                              double n2, double null_value) {
  const Moments mom = moments(fold_values);
  CorrectedTest out;
  out.mean = mom.mean;
  out.sd = std::sqrt(mom.var);
  out.df = static_cast<int>(fold_values.size()) - 1;
  out.variance_corrected = correction(k, r, n1, n2) * mom.var;
  const double diff = mom.mean - null_value;
  if (out.variance_corrected == 0.0) {
    out.zero_variance = true;
    if (diff == 0.0) {
      out.t = 0.0;
      out.p = 1.0;
    } else {
      out.t = diff > 0 ? std::numeric_limits<double>::infinity()
                       : -std::numeric_limits<double>::infinity();
      out.p = 0.0;
    }
    return out;
  }
  out.t = diff / std::sqrt(out.variance_corrected);
  out.p = 2.0 * boost::math::cdf(boost::math::complement(boost::math::students_t(out.df),
                                                         std::abs(out.t)));
  return out;
}

CorrectedTest corrected_paired_ttest(std::span<const double> a, std::span<const double> b, int k,
                                     int r, double n1, double n2) {
  if (a.size() != b.size()) throw Error(ErrorCode::ShapeMismatch, "paired fold values");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  return corrected_ttest(d, k, r, n1, n2, 0.0);
}

Interval corrected_ci(std::span<const double> fold_values, int k, int r, double n1, double n2,
                      double level) {
  const Moments mom = moments(fold_values);
  const int df = static_cast<int>(fold_values.size()) - 1;
  const double half = student_t_quantile(df, 0.5 + 0.5 * level) *
                      std::sqrt(correction(k, r, n1, n2) * mom.var);
  return {mom.mean - half, mom.mean + half};
}

FdrResult bh_fdr(std::span<const double> pvalues, double q) {
  const std::size_t m = pvalues.size();
  FdrResult out{std::vector<bool>(m, false), std::vector<double>(m, 1.0)};
  if (m == 0) return out;
  for (double p : pvalues)
    if (!(p >= 0 && p <= 1)) throw Error(ErrorCode::DomainError, "p-values must lie in [0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return pvalues[a] < pvalues[b]; });
  // Largest rank whose p-value clears its step-up threshold.
  std::size_t cutoff = 0;
  for (std::size_t i = 0; i < m; ++i)
    if (pvalues[order[i]] <= q * static_cast<double>(i + 1) / static_cast<double>(m)) cutoff = i + 1;
  for (std::size_t i = 0; i < cutoff; ++i) out.rejected[order[i]] = true;
  double running = 1.0;
  for (std::size_t i = m; i-- > 0;) {
    running = std::min(running, pvalues[order[i]] * static_cast<double>(m) / static_cast<double>(i + 1));
    out.adjusted[order[i]] = std::max(running, pvalues[order[i]]);
  }
  return out;
}

double mdes(double sigma_fold, int k, int r, double n1, double n2, double alpha, double power,
            double null_value) {
  if (sigma_fold < 0) throw Error(ErrorCode::DomainError, "sigma_fold must be >= 0");
  const double z = normal_quantile(1.0 - alpha / 2.0) + normal_quantile(power);
  return null_value + z * std::sqrt(correction(k, r, n1, n2) * sigma_fold * sigma_fold);
}

}  // namespace usbl
