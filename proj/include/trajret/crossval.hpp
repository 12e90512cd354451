#pragma once

#include <Eigen/Core>
#include <functional>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "trajret/classifiers.hpp"
#include "trajret/encoder.hpp"
#include "trajret/metrics.hpp"
#include "trajret/oracle.hpp"
#include "trajret/synthdata.hpp"
#include "trajret/training.hpp"

namespace trajret {

struct Fold {
  int index = 0;
  std::vector<std::size_t> train;  // cohort positions, ascending
  std::vector<std::size_t> test;
};

struct FoldPlan {
  int n_folds = 5;
  std::uint64_t seed = 42;
  std::vector<Fold> folds;
};

/// Shuffles each class, then deals members round-robin over the folds with one
/// pointer that carries over from class 0 to class 1. Fold sizes therefore
/// differ by at most one overall and within each class.
FoldPlan stratified_kfold(const Cohort& cohort, int n_folds, std::uint64_t seed);

/// Throws LeakageError when a test subject of the fold appears in `ids`.
void assert_no_leakage(const Cohort& cohort, const Fold& fold, const std::vector<std::size_t>& ids,
                       const std::string& where);

enum class Method { M3, M3b, M4, M5, M6Style, RandomEncoder, K1Retrieval, NoAgeFilter };
const char* to_string(Method m);
const char* describe(Method m);
Method method_from_string(const std::string& s);
std::vector<Method> all_methods();
bool uses_oracle(Method m);

struct EvalConfig {
  int n_folds = 5;
  std::uint64_t seed = 42;
  EncoderConfig encoder{};
  OracleConfig oracle{};
  MlpConfig mlp{};
  LogisticConfig logistic{};
  std::vector<Method> methods{Method::M5};
  int threads = 1;  // does not affect results, so it is not echoed

  void validate() const;
};

nlohmann::json to_json(const EvalConfig& c);
/// Strict merge; also accepts "methods" as a list of method names.
void merge_json(const nlohmann::json& j, EvalConfig& c);

struct FoldEmbedding {
  int fold = 0;
  Eigen::MatrixXd train_z;  // rows follow Fold::train
  Eigen::MatrixXd test_z;   // rows follow Fold::test
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct EmbeddedFolds {
  FoldPlan plan;
  bool trained = true;
  std::vector<FoldEmbedding> folds;
};

using ProgressFn = std::function<void(const std::string&)>;

/// Seed of the encoder for one fold.
std::uint64_t fold_encoder_seed(std::uint64_t seed, int fold);

/// Trains (or, with train = false, only initializes) one encoder per fold on
/// that fold's training subjects and embeds both sides. `cohort` must already be
/// preprocessed. Folds run on up to `threads` workers; results do not depend on it.
EmbeddedFolds embed_folds(const Cohort& cohort, const FoldPlan& plan, const EncoderConfig& cfg, bool train,
                          int threads, const ProgressFn& progress = {});

struct Prediction {
  std::string subject_id;
  int fold = 0;
  int label = 0;
  double score = 0.0;
  int predicted = 0;
};

struct AuditSummary {
  std::size_t responses = 0;
  std::size_t hallucinations = 0;
  std::size_t adherent = 0;
  std::size_t unparseable = 0;
  double hallucination_rate() const { return responses == 0 ? 0.0 : static_cast<double>(hallucinations) / responses; }
  double adherence_rate() const { return responses == 0 ? 1.0 : static_cast<double>(adherent) / responses; }
};

struct MethodResult {
  Method method = Method::M5;
  std::vector<Prediction> predictions;  // cohort order
  std::vector<MetricSet> per_fold;
  MetricSet aggregate;                  // at the default threshold
  ThresholdSweep sweep;
  std::vector<RocPoint> roc;
  std::optional<RetrievalQuality> retrieval;
  std::optional<AuditSummary> audit;
  std::vector<OracleVerdict> verdicts;  // cohort order; oracle methods only
};

/// Evaluates one method over precomputed fold embeddings.
MethodResult evaluate_method(const Cohort& cohort, const EmbeddedFolds& embedded, Method method,
                             const EvalConfig& cfg, const VerdictProvider& provider);

struct WeightRow {
  double neighbor_weight = 0.0;
  double calibration_mae = 0.0;
  double auc = 0.0;
  double balanced_accuracy = 0.0;
};

/// Re-fuses cached oracle verdicts for each weight; retrieval and provider
/// calls are not repeated.
std::vector<WeightRow> weight_sweep(const MethodResult& oracle_result, const Cohort& cohort,
                                    const OracleConfig& base, const std::vector<double>& grid);
std::vector<double> default_weight_grid();

struct FoldSummary {
  int fold = 0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_test_positive = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct EvalReport {
  nlohmann::json config;
  std::vector<FoldSummary> folds;
  std::vector<MethodResult> methods;
  std::vector<WeightRow> weights;
};

/// Stable digest of the cohort contents, echoed in reports.
std::string cohort_digest(const Cohort& cohort);

/// Full protocol: preprocess, plan folds, embed (trained and/or random as the
/// methods require), evaluate each method. `weight_grid` non-empty adds a
/// weight sweep over the M5 verdicts.
EvalReport run_cv(const Cohort& cohort, const EvalConfig& cfg, const VerdictProvider& provider,
                  const std::vector<double>& weight_grid = {}, const ProgressFn& progress = {});

}  // namespace trajret
