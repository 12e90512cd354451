#include <doctest.h>

#include <cstdio>

#include "oracles.hpp"
#include "trajret/error.hpp"
#include "trajret/metrics.hpp"
#include "trajret/random.hpp"

using namespace trajret;

namespace {

// Scores drawn from a few levels so ties are common.
void random_case(Rng& rng, std::size_t n, std::vector<double>& s, std::vector<int>& y) {
  s.resize(n);
  y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s[i] = static_cast<double>(rng.below(6)) / 5.0;
    y[i] = static_cast<int>(rng.below(2));
  }
  y[0] = 0;
  y[1] = 1;
}

}  // namespace

TEST_CASE("AUC examples") {
  CHECK(auc_roc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
  CHECK(auc_roc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc_roc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{0, 0, 1, 1}) == 0.0);
  CHECK(auc_roc(std::vector<double>(7, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0, 0}) == 0.5);
  CHECK_THROWS_AS(auc_roc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), ConfigError);
  CHECK_THROWS_AS(auc_roc(std::vector<double>{0.1}, std::vector<int>{1, 0}), ShapeError);
  CHECK_THROWS_AS(auc_roc(std::vector<double>{0.1, NAN}, std::vector<int>{1, 0}), NumericError);
}

TEST_CASE("AUC equals the pair count") {
  Rng rng(1);
  std::vector<double> s;
  std::vector<int> y;
  for (std::size_t n = 2; n <= 50; ++n) {
    for (int rep = 0; rep < 20; ++rep) {
      random_case(rng, n, s, y);
      CHECK(auc_roc(s, y) == doctest::Approx(oracle::auc_pairs(s, y)).epsilon(1e-12));
    }
  }
}

TEST_CASE("confusion and balanced accuracy") {
  const std::vector<double> s{0.9, 0.6, 0.5, 0.2, 0.7, 0.4, 0.5, 0.1};
  const std::vector<int> y{1, 1, 1, 1, 0, 0, 0, 0};
  const MetricSet m = classification_metrics(s, y, 0.5);
  CHECK(m.confusion.tp == 2);
  CHECK(m.confusion.fn == 2);
  CHECK(m.confusion.fp == 1);
  CHECK(m.confusion.tn == 3);
  CHECK(m.sensitivity == 0.5);
  CHECK(m.specificity == 0.75);
  CHECK(m.balanced_accuracy == 0.625);
  CHECK(m.f1 == doctest::Approx(2.0 * 2 / (2 * 2 + 1 + 2)));

  Rng rng(2);
  std::vector<double> rs;
  std::vector<int> ry;
  for (int t = 0; t < 500; ++t) {
    random_case(rng, 2 + rng.below(40), rs, ry);
    const double thr = static_cast<double>(rng.below(6)) / 5.0;
    const MetricSet r = classification_metrics(rs, ry, thr);
    const auto o = oracle::confusion(rs, ry, thr);
    CHECK(r.confusion.tp == o.tp);
    CHECK(r.confusion.fp == o.fp);
    CHECK(r.confusion.tn == o.tn);
    CHECK(r.confusion.fn == o.fn);
    CHECK(r.balanced_accuracy == doctest::Approx(0.5 * (r.sensitivity + r.specificity)).epsilon(1e-15));
    CHECK(r.balanced_accuracy == doctest::Approx(oracle::balanced_accuracy(rs, ry, thr)).epsilon(1e-12));
  }
}

TEST_CASE("the reported rates combine to 0.744") {
  // sensitivity 0.566, specificity 0.921
  const double ba = 0.5 * (0.566 + 0.921);
  CHECK(ba == doctest::Approx(0.7435).epsilon(1e-12));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", ba + 1e-12);
  CHECK(std::string(buf) == "0.744");
}

TEST_CASE("extreme thresholds") {
  const std::vector<double> s{0.9, 0.8, 0.1};
  const std::vector<int> y{1, 0, 0};
  const MetricSet none = classification_metrics(s, y, 1.0);
  CHECK(none.sensitivity == 0.0);
  CHECK(none.specificity == 1.0);
  CHECK(none.f1 == 0.0);
  const MetricSet all = classification_metrics(s, y, -1.0);
  CHECK(all.sensitivity == 1.0);
  CHECK(all.specificity == 0.0);
  CHECK_THROWS_AS(classification_metrics(std::vector<double>{0.9, 0.8}, std::vector<int>{1, 1}, 0.5), ConfigError);
}

TEST_CASE("threshold grid and sweep") {
  const auto grid = threshold_grid();
  REQUIRE(grid.size() == 11);
  CHECK(grid.front() == 0.30);
  CHECK(grid[3] == 0.36);
  CHECK(grid.back() == 0.50);
  CHECK_THROWS_AS(threshold_grid(0.5, 0.3, 0.02), ConfigError);

  SUBCASE("constant scores sit at chance") {
    const std::vector<double> s(10, 0.4);
    const std::vector<int> y{0, 1, 0, 1, 0, 1, 0, 0, 1, 0};
    const ThresholdSweep sw = threshold_sweep(s, y);
    CHECK(sw.best().balanced_accuracy == 0.5);
    // ties go to the largest threshold
    CHECK(sw.best().threshold == 0.50);
  }
  SUBCASE("argmax matches a direct scan") {
    Rng rng(3);
    std::vector<double> s;
    std::vector<int> y;
    for (int t = 0; t < 200; ++t) {
      const std::size_t n = 4 + rng.below(40);
      s.resize(n);
      y.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        s[i] = rng.uniform(0.2, 0.6);
        y[i] = static_cast<int>(rng.below(2));
      }
      y[0] = 0;
      y[1] = 1;
      const ThresholdSweep sw = threshold_sweep(s, y);
      REQUIRE(sw.rows.size() == 11);
      std::size_t best = 0;
      double best_ba = -1;
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const double ba = oracle::balanced_accuracy(s, y, grid[g]);
        if (ba >= best_ba) {
          best_ba = ba;
          best = g;
        }
      }
      CHECK(sw.best_index == best);
      CHECK(sw.best().balanced_accuracy == doctest::Approx(best_ba).epsilon(1e-12));
    }
  }
}

TEST_CASE("ROC curve") {
  const std::vector<double> s{0.9, 0.8, 0.8, 0.3};
  const std::vector<int> y{1, 0, 1, 0};
  const auto roc = roc_curve(s, y);
  REQUIRE(roc.size() == 4);
  CHECK(roc[0].fpr == 0.0);
  CHECK(roc[0].tpr == 0.0);
  CHECK(roc[1].threshold == 0.9);
  CHECK(roc[1].tpr == 0.5);
  CHECK(roc[2].fpr == 0.5);
  CHECK(roc[2].tpr == 1.0);
  CHECK(roc[3].fpr == 1.0);
  // trapezoid area equals the pair-count AUC
  double area = 0;
  for (std::size_t i = 1; i < roc.size(); ++i) area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2;
  CHECK(area == doctest::Approx(auc_roc(s, y)));
}

TEST_CASE("retrieval quality") {
  auto result = [](std::vector<std::pair<int, double>> n) {
    RetrievalResult r;
    for (auto [label, sim] : n) r.neighbors.push_back({"x", sim, label, 30, Sex::M, 0});
    r.k = static_cast<int>(r.neighbors.size());
    return r;
  };
  const std::vector<RetrievalResult> rs{result({{1, 0.9}, {0, 0.5}}), result({{0, 0.8}, {0, 0.6}}),
                                        result({{1, 0.7}, {1, 0.7}}), result({{0, 0.4}, {1, 0.2}})};
  const std::vector<int> y{1, 1, 0, 0};
  const std::vector<double> p{0.9, 0.2, 0.4, 0.0};
  const RetrievalQuality q = retrieval_quality(rs, y, p);
  CHECK(q.queries == 4);
  CHECK(q.top_k_fidelity == 0.5);
  CHECK(q.mean_cosine == doctest::Approx(4.8 / 8));
  CHECK(q.calibration_mae == doctest::Approx((0.1 + 0.8 + 0.4 + 0.0) / 4));

  const std::vector<double> perfect{1, 1, 0, 0};
  const std::vector<RetrievalResult> same{result({{1, 1.0}}), result({{1, 1.0}}), result({{0, 1.0}}),
                                          result({{0, 1.0}})};
  const RetrievalQuality pq = retrieval_quality(same, y, perfect);
  CHECK(pq.top_k_fidelity == 1.0);
  CHECK(pq.calibration_mae == 0.0);
  CHECK(pq.mean_cosine == 1.0);
  CHECK_THROWS_AS(retrieval_quality(same, std::vector<int>{1}, perfect), ShapeError);
}
