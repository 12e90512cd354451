#pragma once

#include <span>
#include <vector>

#include "trajret/archive.hpp"

namespace trajret {

struct Confusion {
  long tp = 0;
  long fp = 0;
  long tn = 0;
  long fn = 0;
};

struct MetricSet {
  double threshold = 0.5;
  double auc = 0.0;
  double f1 = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double balanced_accuracy = 0.0;
  Confusion confusion;
};

/// Mann-Whitney AUC: share of (positive, negative) pairs ordered correctly,
/// ties counting one half. Throws ConfigError unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

/// Predicts 1 iff score > threshold. Rates with an empty denominator are 0.
MetricSet classification_metrics(std::span<const double> scores, std::span<const int> labels, double threshold);

/// Inclusive grid lo, lo + step, ..., hi with values rounded to 1e-9 so
/// that 0.30 + 3 * 0.02 prints as 0.36.
std::vector<double> threshold_grid(double lo = 0.30, double hi = 0.50, double step = 0.02);

struct ThresholdSweep {
  std::vector<MetricSet> rows;
  std::size_t best_index = 0;
  const MetricSet& best() const { return rows.at(best_index); }
};

/// Picks the grid threshold with the highest balanced accuracy; ties go to the
/// largest threshold.
ThresholdSweep threshold_sweep(std::span<const double> scores, std::span<const int> labels,
                               const std::vector<double>& grid = threshold_grid());

struct RocPoint {
  double threshold = 0.0;  // predicted positive iff score >= threshold
  double fpr = 0.0;
  double tpr = 0.0;
};

/// Corner (0,0) followed by one point per distinct score, descending.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);

struct RetrievalQuality {
  double top_k_fidelity = 0.0;
  double mean_cosine = 0.0;
  double calibration_mae = 0.0;
  std::size_t queries = 0;
};

/// Fidelity: share of queries with at least one retrieved neighbour of the
/// same label. Mean cosine: mean over every retrieved similarity. MAE: mean
/// |p_q - y|.
RetrievalQuality retrieval_quality(std::span<const RetrievalResult> results, std::span<const int> labels,
                                   std::span<const double> p_q);

}  // namespace trajret
