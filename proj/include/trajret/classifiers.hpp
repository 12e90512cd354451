#pragma once

#include <Eigen/Core>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trajret/checkpoint.hpp"
#include "trajret/diffkernel.hpp"

namespace trajret {

// Classifiers over frozen trajectory vectors. Inputs are matrices with one
// sample per row; labels are 0/1.

class ClassifierModel {
 public:
  virtual ~ClassifierModel() = default;
  virtual void fit(const Eigen::MatrixXd& x, std::span<const int> y) = 0;
  /// p(y = 1) per row. Throws if called before fit().
  virtual Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const = 0;
  virtual bool fitted() const = 0;
  virtual std::string name() const = 0;
  virtual ad::Checkpoint snapshot() const = 0;
};

/// k = max(1, min(max_k, floor(n_train / 2))).
int knn_k(std::size_t n_train, int max_k = 5);

/// Cosine k-NN; ties in similarity go to the earlier training row.
class KnnClassifier final : public ClassifierModel {
 public:
  explicit KnnClassifier(int max_k = 5, int fixed_k = 0) : max_k_(max_k), fixed_k_(fixed_k) {}
  void fit(const Eigen::MatrixXd& x, std::span<const int> y) override;
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const override;
  bool fitted() const override { return k_ > 0; }
  std::string name() const override { return "knn"; }
  ad::Checkpoint snapshot() const override;
  static KnnClassifier restore(const ad::Checkpoint& ckpt);
  int k() const { return k_; }

 private:
  int max_k_;
  int fixed_k_;
  int k_ = 0;
  Eigen::MatrixXd train_;  // unit rows
  Eigen::VectorXd labels_;
};

/// Balanced class weights n / (2 n_c). Throws ConfigError if a class is absent.
Eigen::VectorXd balanced_weights(std::span<const int> y, const std::string& module);

struct LogisticConfig {
  double c = 1.0;
  int max_iterations = 1000;
  double tolerance = 1e-6;
};

/// Minimizes (1/n) sum_i s_i nll_i + ||w||^2 / (2C) with balanced s_i by
/// gradient descent with Armijo backtracking. The bias is not penalized.
class LogisticRegression final : public ClassifierModel {
 public:
  explicit LogisticRegression(LogisticConfig cfg = {}) : cfg_(cfg) {}
  void fit(const Eigen::MatrixXd& x, std::span<const int> y) override;
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const override;
  bool fitted() const override { return fitted_; }
  std::string name() const override { return "logistic_regression"; }
  ad::Checkpoint snapshot() const override;
  static LogisticRegression restore(const ad::Checkpoint& ckpt);

  const Eigen::VectorXd& weights() const { return w_; }
  double bias() const { return b_; }
  int iterations() const { return iterations_; }
  /// Objective and gradient norm at (w, b) for the given data.
  static double objective(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const Eigen::VectorXd& s,
                          const Eigen::VectorXd& w, double b, double c, Eigen::VectorXd* grad_w, double* grad_b);
  double gradient_norm(const Eigen::MatrixXd& x, std::span<const int> y) const;

 private:
  LogisticConfig cfg_;
  Eigen::VectorXd w_;
  double b_ = 0.0;
  bool fitted_ = false;
  int iterations_ = 0;
};

struct MlpConfig {
  std::vector<int> hidden{256, 128};
  double alpha = 1e-3;
  double learning_rate = 1e-3;
  int batch_size = 200;
  int max_epochs = 200;
  int patience = 10;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
};

/// ReLU MLP trained on balanced weighted cross-entropy with Adam. Early
/// stopping watches the weighted loss on a stratified validation split and
/// restores the best weights.
class MlpClassifier final : public ClassifierModel {
 public:
  explicit MlpClassifier(MlpConfig cfg = {}) : cfg_(std::move(cfg)) {}
  void fit(const Eigen::MatrixXd& x, std::span<const int> y) override;
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const override;
  bool fitted() const override { return fitted_; }
  std::string name() const override { return "mlp"; }
  ad::Checkpoint snapshot() const override;
  static MlpClassifier restore(const ad::Checkpoint& ckpt);

  int epochs_run() const { return epochs_run_; }
  int best_epoch() const { return best_epoch_; }
  double best_validation_accuracy() const { return best_val_accuracy_; }

 private:
  Eigen::VectorXd logits(const Eigen::MatrixXd& x) const;

  MlpConfig cfg_;
  std::vector<ad::Parameter> weights_;
  std::vector<ad::Parameter> biases_;
  bool fitted_ = false;
  int epochs_run_ = 0;
  int best_epoch_ = 0;
  double best_val_accuracy_ = 0.0;
};

/// Equal-weight mean of member probabilities.
class SoftVoteEnsemble final : public ClassifierModel {
 public:
  explicit SoftVoteEnsemble(std::vector<std::unique_ptr<ClassifierModel>> members);
  /// kNN, logistic regression, MLP(seed 99), MLP(seed 123).
  static SoftVoteEnsemble default_members();

  void fit(const Eigen::MatrixXd& x, std::span<const int> y) override;
  Eigen::VectorXd predict_proba(const Eigen::MatrixXd& x) const override;
  bool fitted() const override;
  std::string name() const override { return "soft_vote"; }
  ad::Checkpoint snapshot() const override;
  const std::vector<std::unique_ptr<ClassifierModel>>& members() const { return members_; }

 private:
  std::vector<std::unique_ptr<ClassifierModel>> members_;
};

void save_classifier(const std::string& path, const ClassifierModel& model);
std::unique_ptr<ClassifierModel> load_classifier(const std::string& path);
std::unique_ptr<ClassifierModel> restore_classifier(const ad::Checkpoint& ckpt);

}  // namespace trajret
