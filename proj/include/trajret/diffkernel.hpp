#pragma once

// Define-by-run reverse-mode differentiation over dense row-major batches.
//
// Every Var is a (rows x cols) matrix whose rows are batch samples. A Graph is
// built per step; nodes are appended in evaluation order, so reverse creation
// order is a valid topological order for backward().

#include <Eigen/Core>
#include <functional>
#include <string>
#include <vector>

#include "trajret/random.hpp"

namespace trajret::ad {

using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;

/// Trainable tensor with its gradient and AdamW moment accumulators.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix first_moment;
  Matrix second_moment;
  long steps = 0;

  Parameter() = default;
  Parameter(std::string n, Matrix init);

  void zero_grad() { grad.setZero(); }
};

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : graph_(g), id_(id) {}

  Graph& graph() const { return *graph_; }
  int id() const { return id_; }
  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using BackwardFn = std::function<void(const Matrix& out_grad)>;

  /// Leaf that never receives gradients.
  Var constant(Matrix value);
  /// Leaf that records its gradient (readable through grad()).
  Var input(Matrix value);
  /// Leaf bound to a parameter; backward() adds into Parameter::grad.
  Var param(Parameter& p);

  /// Appends an op node. `backward` is only kept when a parent needs gradients.
  /// Throws NumericError if `value` is not finite.
  Var record(Matrix value, std::initializer_list<Var> parents, BackwardFn backward,
             const char* op);

  bool requires_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].requires_grad; }
  const Matrix& value(int id) const {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.param != nullptr ? n.param->value : n.value;
  }

  /// Adds `g` into the gradient buffer of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  /// Reverse pass from a 1x1 loss. Node gradients are recomputed on every call;
  /// parameter gradients accumulate across calls until zeroed.
  void backward(Var loss);

  /// Gradient of an input() leaf after backward().
  const Matrix& grad(Var v) const;

  /// Parameters in the order they were bound. The same Parameter appears once
  /// per use, so a shared-weight model lists each of its tensors twice.
  std::vector<const Parameter*> parameter_uses() const;

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
    const char* op = "";
  };
  std::vector<Node> nodes_;
};

// ---- forward ops -----------------------------------------------------------

/// x * W + b with x (n x in), W (in x out), b (1 x out).
Var dense(Var x, Var weight, Var bias);
Var relu(Var x);
/// Inverted dropout; identity when !training or p == 0.
Var dropout(Var x, double p, bool training, Rng& rng);
/// Row-wise x / ||x||_2. Throws NumericError on a zero row.
Var l2_normalize(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double c);
/// Rows [begin, begin + count).
Var slice_rows(Var x, Eigen::Index begin, Eigen::Index count);

Var sum(Var x);
Var mean(Var x);
/// log(sum(exp(x))) over all entries, max-shifted.
Var logsumexp(Var x);
/// Row-wise logsumexp, (n x 1).
Var logsumexp_rows(Var x);

/// Per-feature running statistics of a batch-norm layer.
struct BatchNormStats {
  RowVector running_mean;
  RowVector running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  BatchNormStats() = default;
  explicit BatchNormStats(Eigen::Index features)
      : running_mean(RowVector::Zero(features)), running_var(RowVector::Ones(features)) {}
};

/// Batch normalization. In training mode statistics come from consecutive
/// groups of `group_rows` rows (0 = whole batch; a short tail joins the last
/// group) and each group updates the running statistics. Inference mode uses
/// the running statistics only.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, bool training,
              Eigen::Index group_rows = 0);

}  // namespace trajret::ad
