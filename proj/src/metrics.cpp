#include "trajret/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "trajret/error.hpp"

namespace trajret {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ShapeError("eval", "scores and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) throw ConfigError("eval", "label", "must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("eval", "non-finite score");
  }
}

double ratio(long num, long den) { return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den); }

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const long n_pos = std::count(labels.begin(), labels.end(), 1);
  const long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("eval", "labels", "AUC needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the Mann-Whitney U, kept integral so the result is a single rounding.
  long long twice_u = 0;
  long long neg_below = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    long long pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? pos : neg) += 1;
      ++j;
    }
    twice_u += 2 * pos * neg_below + pos * neg;
    neg_below += neg;
    i = j;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricSet classification_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  MetricSet m;
  m.threshold = threshold;
  m.auc = auc_roc(scores, labels);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] > threshold;
    if (labels[i] == 1) {
      (pred ? m.confusion.tp : m.confusion.fn) += 1;
    } else {
      (pred ? m.confusion.fp : m.confusion.tn) += 1;
    }
  }
  const auto& c = m.confusion;
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  m.balanced_accuracy = (m.sensitivity + m.specificity) / 2.0;
  m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
  return m;
}

std::vector<double> threshold_grid(double lo, double hi, double step) {
  if (!(step > 0.0) || !(hi >= lo)) throw ConfigError("eval", "threshold grid", "need step > 0 and hi >= lo");
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  std::vector<double> grid;
  for (long i = 0; i <= n; ++i) grid.push_back(std::round((lo + static_cast<double>(i) * step) * 1e9) / 1e9);
  return grid;
}

ThresholdSweep threshold_sweep(std::span<const double> scores, std::span<const int> labels,
                               const std::vector<double>& grid) {
  if (grid.empty()) throw ConfigError("eval", "threshold grid", "must not be empty");
  ThresholdSweep sweep;
  double best = -1.0;
  double best_t = -1.0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    sweep.rows.push_back(classification_metrics(scores, labels, grid[i]));
    const double b = sweep.rows.back().balanced_accuracy;
    if (b > best || (b == best && grid[i] > best_t)) {
      best = b;
      best_t = grid[i];
      sweep.best_index = i;
    }
  }
  return sweep;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels);
  const long n_pos = std::count(labels.begin(), labels.end(), 1);
  const long n_neg = static_cast<long>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("eval", "labels", "ROC needs both classes");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<RocPoint> out{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  long tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    out.push_back({s, ratio(fp, n_neg), ratio(tp, n_pos)});
  }
  return out;
}

RetrievalQuality retrieval_quality(std::span<const RetrievalResult> results, std::span<const int> labels,
                                   std::span<const double> p_q) {
  if (results.size() != labels.size() || results.size() != p_q.size()) {
    throw ShapeError("eval", "retrieval results, labels, and probabilities differ in length");
  }
  RetrievalQuality q;
  q.queries = results.size();
  if (results.empty()) return q;
  std::size_t hits = 0, sims = 0;
  double sim_sum = 0.0, abs_err = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    bool hit = false;
    for (const auto& n : results[i].neighbors) {
      hit = hit || n.label == labels[i];
      sim_sum += n.similarity;
      ++sims;
    }
    hits += hit ? 1 : 0;
    abs_err += std::abs(p_q[i] - labels[i]);
  }
  q.top_k_fidelity = static_cast<double>(hits) / static_cast<double>(results.size());
  q.mean_cosine = sims == 0 ? 0.0 : sim_sum / static_cast<double>(sims);
  q.calibration_mae = abs_err / static_cast<double>(results.size());
  return q;
}

}  // namespace trajret
