#include <doctest.h>

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "oracles.hpp"
#include "toy.hpp"
#include "usbl/error.hpp"
#include "usbl/experiment.hpp"
#include "usbl/folds.hpp"
#include "usbl/metrics.hpp"

using namespace usbl;

TEST_CASE("AUC") {
  CHECK(auc(std::vector<double>{0.9, 0.8, 0.3, 0.2}, std::vector<int>{1, 1, 0, 0}).value() == 1.0);
  CHECK(auc(std::vector<double>{0.9, 0.2, 0.4, 0.6}, std::vector<int>{1, 1, 0, 0}).value() == 0.5);
  CHECK(auc(std::vector<double>(6, 0.3), std::vector<int>{1, 0, 1, 0, 1, 0}).value() == 0.5);
  CHECK(!auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());

  SUBCASE("equals the all-pairs count") {
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 200; ++rep) {
      const std::size_t n = 2 + rng() % 199;
      std::vector<double> s(n);
      std::vector<int> y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = static_cast<double>(rng() % 20);  // plenty of ties
        y[i] = static_cast<int>(rng() % 2);
      }
      y[0] = 0;
      y[1] = 1;
      CHECK(auc(s, y).value() == oracle::auc_all_pairs(s, y));
    }
  }
  SUBCASE("invariant under strictly monotone maps") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> s(40), t(40);
      std::vector<int> y(40);
      for (int i = 0; i < 40; ++i) {
        s[i] = nd(rng);
        y[i] = i % 2;
      }
      const double a = 0.5 + static_cast<double>(rng() % 100) / 20.0;
      for (int i = 0; i < 40; ++i) t[i] = std::exp(a * s[i]) + std::atan(s[i]);
      CHECK(auc(s, y) == auc(t, y));
      // Threshold moves with the map.
      const double thr = 0.1;
      std::vector<double> tt(40);
      for (int i = 0; i < 40; ++i) tt[i] = std::exp(a * s[i]) + std::atan(s[i]);
      const Confusion c1 = confusion_metrics(s, y, thr);
      const Confusion c2 = confusion_metrics(tt, y, std::exp(a * thr) + std::atan(thr));
      CHECK(c1.sensitivity == c2.sensitivity);
      CHECK(c1.specificity == c2.specificity);
    }
  }
}

TEST_CASE("confusion metrics") {
  const std::vector<int> y{1, 1, 0, 0};
  Confusion c = confusion_metrics(std::vector<double>{0.9, 0.8, 0.1, 0.2}, y);
  CHECK(c.sensitivity == 1.0);
  CHECK(c.specificity == 1.0);
  c = confusion_metrics(std::vector<double>{0.9, 0.8, 0.7, 0.6}, y);
  CHECK(c.sensitivity == 1.0);
  CHECK(c.specificity == 0.0);
  c = confusion_metrics(std::vector<double>{0.6, 0.4, 0.5, 0.3}, y);
  CHECK(c.sensitivity == 0.5);
  CHECK(c.specificity == 0.5);
  c = confusion_metrics(std::vector<double>{0.6, 0.4}, std::vector<int>{1, 1});
  CHECK(c.sensitivity == 0.5);
  CHECK(!c.specificity.has_value());
}

TEST_CASE("Brier and cross-entropy") {
  const std::vector<int> y{1, 0, 1, 1, 0};
  const std::vector<double> half(5, 0.5);
  CHECK(brier(half, y) == 0.25);
  CHECK(cross_entropy(half, y) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  const std::vector<double> perfect{1, 0, 1, 1, 0};
  CHECK(brier(perfect, y) == 0.0);
  CHECK(cross_entropy(perfect, y) < 1e-11);
}

TEST_CASE("corrected resampled t-test") {
  SUBCASE("half-width and inflation at five folds, ten repeats") {
    const double factor = std::sqrt(1.0 / 50 + 0.25) * student_t_quantile(49, 0.975);
    CHECK(factor == doctest::Approx(1.044).epsilon(1e-3));
    CHECK(std::sqrt(0.27 / 0.02) == doctest::Approx(3.674).epsilon(1e-3));
    std::vector<double> v(50);
    for (int i = 0; i < 50; ++i) v[i] = 0.7 + 0.1 * std::sin(i);
    const Interval ci = corrected_ci(v, 5, 10, 100, 25);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 50;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double sd = std::sqrt(ss / 49);
    CHECK((ci.upper - ci.lower) / 2 == doctest::Approx(factor * sd).epsilon(1e-12));
  }
  SUBCASE("values at the null") {
    const std::vector<double> v(10, 0.5);
    const CorrectedTest t = corrected_ttest(v, 5, 2, 8, 2, 0.5);
    CHECK(t.t == 0.0);
    CHECK(t.p == 1.0);
    CHECK(t.zero_variance);
  }
  SUBCASE("zero variance away from the null") {
    const std::vector<double> v(10, 0.8);
    const CorrectedTest t = corrected_ttest(v, 5, 2, 8, 2, 0.5);
    CHECK(std::isinf(t.t));
    CHECK(t.t > 0);
    CHECK(t.p == 0.0);
  }
  SUBCASE("no overlap and one repeat is the classical t-test") {
    std::mt19937_64 rng(4);
    std::normal_distribution<double> nd(0.6, 0.1);
    std::vector<double> v(12);
    for (auto& x : v) x = nd(rng);
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 12;
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    const double se = std::sqrt(ss / 11 / 12);
    const double tc = (mean - 0.5) / se;
    boost::math::students_t dist(11);
    const double pc = 2 * boost::math::cdf(boost::math::complement(dist, std::abs(tc)));
    const CorrectedTest t = corrected_ttest(v, 12, 1, 1, 0, 0.5);
    CHECK(t.t == doctest::Approx(tc).epsilon(1e-12));
    CHECK(t.p == doctest::Approx(pc).epsilon(1e-10));
    CHECK(t.df == 11);
  }
  SUBCASE("paired test is the one-sample test of differences") {
    const std::vector<double> a{0.7, 0.8, 0.65, 0.9, 0.75}, b{0.6, 0.7, 0.7, 0.6, 0.55};
    std::vector<double> d(5);
    for (int i = 0; i < 5; ++i) d[i] = a[i] - b[i];
    const CorrectedTest p = corrected_paired_ttest(a, b, 5, 1, 4, 1);
    const CorrectedTest o = corrected_ttest(d, 5, 1, 4, 1, 0.0);
    CHECK(p.t == o.t);
    CHECK(p.p == o.p);
  }
}

TEST_CASE("Benjamini-Hochberg") {
  auto all = [](const FdrResult& r, bool v) {
    return std::all_of(r.rejected.begin(), r.rejected.end(), [v](bool x) { return x == v; });
  };
  CHECK(all(bh_fdr(std::vector<double>{0.01, 0.02, 0.03, 0.04}, 0.05), true));
  CHECK(all(bh_fdr(std::vector<double>{0.2, 0.9}, 0.05), false));
  const FdrResult one = bh_fdr(std::vector<double>{0.04}, 0.05);
  CHECK(one.rejected[0]);
  CHECK(one.adjusted[0] == 0.04);

  SUBCASE("hand-stepped example") {
    // Sorted: 0.001 (1), 0.008 (2), 0.039 (3), 0.041 (4), 0.042 (5), 0.06 (6), 0.074 (7), 0.205 (8)
    // Thresholds i q / m with q = 0.05, m = 8: 0.00625, 0.0125, 0.01875, 0.025, ...
    // Largest i with p_(i) <= threshold is 2.
    const std::vector<double> p{0.041, 0.001, 0.205, 0.039, 0.008, 0.06, 0.042, 0.074};
    const FdrResult r = bh_fdr(p, 0.05);
    const std::vector<bool> want{false, true, false, false, true, false, false, false};
    CHECK(r.rejected == want);
    // Adjusted: running minimum from the top of p_(i) m / i.
    CHECK(r.adjusted[1] == doctest::Approx(0.008));
    CHECK(r.adjusted[4] == doctest::Approx(0.032));
    CHECK(r.adjusted[3] == doctest::Approx(0.042 * 8 / 5));
    CHECK(r.adjusted[2] == doctest::Approx(0.205));
  }
  SUBCASE("rejections grow with q") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 100; ++rep) {
      std::vector<double> p(1 + rng() % 20);
      for (auto& v : p) v = std::pow(static_cast<double>(rng() % 10000) / 10000.0, 3);
      const FdrResult a = bh_fdr(p, 0.05), b = bh_fdr(p, 0.1);
      for (std::size_t i = 0; i < p.size(); ++i) {
        if (a.rejected[i]) CHECK(b.rejected[i]);
        CHECK(a.rejected[i] == (a.adjusted[i] <= 0.05));
        CHECK(a.adjusted[i] >= p[i]);
      }
    }
  }
}

TEST_CASE("minimal detectable effect") {
  const double m = mdes(0.19, 5, 10, 100, 25);
  const double z = normal_quantile(0.975) + normal_quantile(0.8);
  CHECK(z == doctest::Approx(2.8016).epsilon(1e-4));
  CHECK(m == doctest::Approx(0.5 + z * std::sqrt(0.27) * 0.19).epsilon(1e-12));
  CHECK(mdes(1e-12, 5, 10, 100, 25) == doctest::Approx(0.5));
  CHECK(mdes(0.38, 5, 10, 100, 25) - 0.5 == doctest::Approx(2 * (m - 0.5)));
}

TEST_CASE("fold assignment") {
  SUBCASE("ten balanced participants") {
    std::vector<int> y(10);
    for (int i = 0; i < 10; ++i) y[i] = i < 5;
    CVConfig cfg;
    cfg.k = 5;
    cfg.r = 3;
    const FoldAssignment fa = make_folds(y, cfg);
    CHECK(fa.folds.size() == 15u);
    for (const auto& f : fa.folds) {
      REQUIRE(f.test.size() == 2u);
      CHECK(y[f.test[0]] + y[f.test[1]] == 1);
    }
  }
  SUBCASE("39 participants give test folds of 7 or 8") {
    std::vector<int> y(39);
    for (int i = 0; i < 39; ++i) y[i] = i < 20;
    CVConfig cfg;
    const FoldAssignment fa = make_folds(y, cfg);
    CHECK(fa.folds.size() == 50u);
    for (const auto& f : fa.folds) {
      CHECK(f.test.size() >= 7u);
      CHECK(f.test.size() <= 8u);
    }
  }
  SUBCASE("partition, disjointness, balance and determinism") {
    std::mt19937_64 rng(6);
    for (int rep = 0; rep < 30; ++rep) {
      const int n = 10 + static_cast<int>(rng() % 40);
      std::vector<int> y(n);
      for (int i = 0; i < n; ++i) y[i] = static_cast<int>(rng() % 2);
      int pos = std::accumulate(y.begin(), y.end(), 0);
      if (pos < 5 || n - pos < 5) continue;
      CVConfig cfg;
      cfg.r = 2;
      cfg.seed = rng();
      const FoldAssignment a = make_folds(y, cfg), b = make_folds(y, cfg);
      for (int r = 0; r < 2; ++r) {
        std::multiset<int> seen;
        std::vector<std::size_t> sizes;
        std::vector<int> positives;
        for (int f = 0; f < 5; ++f) {
          const Fold& fold = a.folds[r * 5 + f];
          CHECK(fold.repeat == r);
          CHECK(fold.fold == f);
          seen.insert(fold.test.begin(), fold.test.end());
          sizes.push_back(fold.test.size());
          int p = 0;
          for (int i : fold.test) p += y[i];
          positives.push_back(p);
          std::set<int> tr(fold.train.begin(), fold.train.end());
          for (int i : fold.test) CHECK(tr.count(i) == 0);
          CHECK(fold.train.size() + fold.test.size() == static_cast<std::size_t>(n));
        }
        CHECK(seen.size() == static_cast<std::size_t>(n));
        CHECK(std::set<int>(seen.begin(), seen.end()).size() == static_cast<std::size_t>(n));
        CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 1);
        CHECK(*std::max_element(positives.begin(), positives.end()) -
                  *std::min_element(positives.begin(), positives.end()) <= 1);
      }
      for (std::size_t i = 0; i < a.folds.size(); ++i) CHECK(a.folds[i].test == b.folds[i].test);
    }
  }
  SUBCASE("too few members of a class") {
    const std::vector<int> y{1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
    CVConfig cfg;
    CHECK_THROWS_AS(make_folds(y, cfg), Error);
    cfg.allow_unstratified = true;
    const FoldAssignment fa = make_folds(y, cfg);
    CHECK(!fa.stratified);
    CHECK(fa.folds.size() == 50u);
  }
}

TEST_CASE("experiment harness") {
  SynthConfig sc;
  sc.n_participants = 20;
  sc.seed = 3;
  sc.modalities = {{"gaze", 3, 6, 10.0, 2}};
  const Cohort cohort = generate_cohort(sc);
  const Dataset& ds = cohort.dataset;

  // Looks up the true label through the participant id; never sees test labels directly.
  std::map<std::string, int> truth;
  for (const auto& s : ds.sessions) truth[s.participant_id] = *s.label;
  MethodSpec oracle_method{"oracle", {"gaze"}, [&truth](const TrainTestSplit& split) {
                             std::vector<double> p;
                             for (const auto& s : split.test->sessions) {
                               CHECK(!s.label.has_value());
                               p.push_back(truth.at(s.participant_id) ? 0.9 : 0.1);
                             }
                             return p;
                           }};
  CVConfig cv;
  cv.seed = 42;

  SUBCASE("a perfect method scores 1 on all 50 folds") {
    const std::vector<MethodSpec> methods{oracle_method};
    const ResultsTable t = run_experiment(ds, methods, cv);
    CHECK(t.records.size() == 50u);
    REQUIRE(t.summaries.size() == 1u);
    CHECK(*t.summaries[0].auc_mean == 1.0);
    CHECK(t.summaries[0].folds_used == 50);
  }
  SUBCASE("train and test never share a participant") {
    MethodSpec spy{"spy", {"gaze"}, [](const TrainTestSplit& split) {
                     std::set<std::string> tr;
                     for (const auto& s : split.train->sessions) {
                       CHECK(s.label.has_value());
                       tr.insert(s.participant_id);
                     }
                     for (const auto& s : split.test->sessions) CHECK(tr.count(s.participant_id) == 0);
                     return std::vector<double>(split.test->sessions.size(), 0.5);
                   }};
    const std::vector<MethodSpec> methods{spy};
    run_experiment(ds, methods, cv);
  }
  SUBCASE("failed folds are recorded and skipped") {
    MethodSpec flaky{"flaky", {"gaze"}, [&truth](const TrainTestSplit& split) {
                       if (split.fold == 2) throw Error(ErrorCode::NotPositiveDefinite, "boom");
                       std::vector<double> p;
                       for (const auto& s : split.test->sessions) p.push_back(truth.at(s.participant_id) ? 0.8 : 0.3);
                       return p;
                     }};
    const std::vector<MethodSpec> methods{flaky};
    const ResultsTable t = run_experiment(ds, methods, cv);
    CHECK(t.summaries[0].folds_failed == 10);
    CHECK(t.summaries[0].folds_used == 40);
    int failed = 0;
    for (const auto& r : t.records) failed += !r.ok;
    CHECK(failed == 10);
  }
  SUBCASE("results do not depend on the thread count") {
    MethodSpec seeded{"seeded", {"gaze"}, [](const TrainTestSplit& split) {
                        std::mt19937_64 rng(split.seed);
                        std::vector<double> p;
                        for (std::size_t i = 0; i < split.test->sessions.size(); ++i)
                          p.push_back(static_cast<double>(rng() % 1000) / 1000.0);
                        return p;
                      }};
    const std::vector<MethodSpec> methods{seeded, oracle_method};
    ExperimentOptions one, four;
    four.jobs = 4;
    CHECK(results_to_json(run_experiment(ds, methods, cv, one)).dump() ==
          results_to_json(run_experiment(ds, methods, cv, four)).dump());
  }
  SUBCASE("report renders summaries without recomputation") {
    const std::vector<MethodSpec> methods{oracle_method};
    nlohmann::json j = results_to_json(run_experiment(ds, methods, cv));
    j["summaries"][0]["auc_mean"] = 0.123;
    CHECK(render_report(j, ReportFormat::Text).find("0.12") != std::string::npos);
    const std::string csv = render_report(j, ReportFormat::Csv);
    CHECK(csv.rfind("method,", 0) == 0);
    CHECK_THROWS_AS(parse_report_format("html"), Error);
  }
}

TEST_CASE("ROC export") {
  const std::vector<double> s{0.9, 0.2, 0.6, 0.4};
  const std::vector<int> y{1, 0, 1, 0};
  const auto pts = roc_points(s, y);
  REQUIRE(!pts.empty());
  for (const auto& p : pts) {
    const Confusion c = confusion_metrics(s, y, p.threshold);
    CHECK(p.sensitivity == *c.sensitivity);
    CHECK(p.specificity == *c.specificity);
  }
}
