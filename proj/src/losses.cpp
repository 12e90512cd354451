#include "trajret/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "trajret/error.hpp"

namespace trajret {

namespace {

void check_labels(Eigen::Index rows, std::span<const int> labels, const char* op) {
  if (static_cast<std::size_t>(rows) != labels.size()) {
    throw ShapeError("encoder", std::string(op) + ": " + std::to_string(rows) + " rows but " +
                                    std::to_string(labels.size()) + " labels");
  }
}

// Gradient of the summed SupCon loss with respect to the similarity logits
// S = z z^T / tau, plus the loss value itself.
double supcon_core(const ad::Matrix& z, std::span<const int> labels, double tau, ad::Matrix* dS) {
  const Eigen::Index n = z.rows();
  check_labels(n, labels, "supcon_loss");
  if (n < 2) throw ShapeError("encoder", "supcon_loss: batch needs at least 2 samples");
  if (!(tau > 0.0)) throw ConfigError("encoder", "tau", "must be positive");
  const ad::Matrix S = (z * z.transpose()) / tau;
  if (dS != nullptr) dS->setZero(n, n);
  double loss = 0.0;
  int anchors = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int positives = 0;
    double max_s = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a == i) continue;
      max_s = std::max(max_s, S(i, a));
      if (labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)]) ++positives;
    }
    if (positives == 0) continue;
    ++anchors;
    double denom = 0.0;
    for (Eigen::Index a = 0; a < n; ++a) {
      if (a != i) denom += std::exp(S(i, a) - max_s);
    }
    const double lse = max_s + std::log(denom);
    double pos_sum = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (p != i && labels[static_cast<std::size_t>(p)] == labels[static_cast<std::size_t>(i)]) pos_sum += S(i, p);
    }
    loss += lse - pos_sum / positives;
    if (dS != nullptr) {
      for (Eigen::Index a = 0; a < n; ++a) {
        if (a == i) continue;
        double g = std::exp(S(i, a) - lse);
        if (labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)]) g -= 1.0 / positives;
        (*dS)(i, a) = g;
      }
    }
  }
  if (anchors == 0) throw ShapeError("encoder", "supcon_loss: no sample has a same-class partner");
  return loss;
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Per-sample focal loss and its derivative with respect to the logit.
std::pair<double, double> focal_sample(double logit, int label, const FocalParams& p) {
  const double sign = label == 1 ? 1.0 : -1.0;
  const double t = sign * logit;
  const double q = sigmoid(t);         // probability of the true class
  const double one_minus_q = sigmoid(-t);
  const double log_q = -softplus(-t);
  const double alpha_t = label == 1 ? p.alpha * p.class_weight : 1.0 - p.alpha;
  const double mod = std::pow(one_minus_q, p.gamma);
  const double value = -alpha_t * mod * log_q;
  // d/dt of -(1-q)^g log q = (1-q)^g * (g q log q - (1-q))
  const double dt = alpha_t * mod * (p.gamma * q * log_q - one_minus_q);
  return {value, dt * sign};
}

}  // namespace

double supcon_loss_value(const ad::Matrix& z, std::span<const int> labels, double tau) {
  return supcon_core(z, labels, tau, nullptr);
}

ad::Var supcon_loss(ad::Var z, std::span<const int> labels, double tau) {
  ad::Matrix dS;
  const double loss = supcon_core(z.value(), labels, tau, &dS);
  ad::Graph& g = z.graph();
  return g.record(ad::Matrix::Constant(1, 1, loss), {z}, [&g, z, dS = std::move(dS), tau](const ad::Matrix& dy) {
    g.accumulate(z, ((dS + dS.transpose()) * z.value()) * (dy(0, 0) / tau));
  }, "supcon_loss");
}

double focal_loss_value(const ad::Matrix& logits, std::span<const int> labels, const FocalParams& p) {
  check_labels(logits.rows(), labels, "focal_loss");
  if (logits.cols() != 1) throw ShapeError("encoder", "focal_loss: logits must be a column");
  if (logits.rows() == 0) throw ShapeError("encoder", "focal_loss: empty batch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    total += focal_sample(logits(i, 0), labels[static_cast<std::size_t>(i)], p).first;
  }
  return total / static_cast<double>(logits.rows());
}

ad::Var focal_loss(ad::Var logits, std::span<const int> labels, const FocalParams& p) {
  const double value = focal_loss_value(logits.value(), labels, p);
  const Eigen::Index n = logits.rows();
  ad::Matrix d(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, 0) = focal_sample(logits.value()(i, 0), labels[static_cast<std::size_t>(i)], p).second /
              static_cast<double>(n);
  }
  ad::Graph& g = logits.graph();
  return g.record(ad::Matrix::Constant(1, 1, value), {logits}, [&g, logits, d = std::move(d)](const ad::Matrix& dy) {
    g.accumulate(logits, d * dy(0, 0));
  }, "focal_loss");
}

ad::Var weighted_bce(ad::Var logits, std::span<const int> labels, std::span<const double> weights) {
  const Eigen::Index n = logits.rows();
  check_labels(n, labels, "weighted_bce");
  if (logits.cols() != 1 || weights.size() != labels.size() || n == 0) {
    throw ShapeError("classifiers", "weighted_bce: shape mismatch");
  }
  double wsum = 0.0;
  for (double w : weights) wsum += w;
  if (!(wsum > 0.0)) throw NumericError("classifiers", "weighted_bce: weights sum to zero");
  double value = 0.0;
  ad::Matrix d(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = logits.value()(i, 0);
    const int y = labels[static_cast<std::size_t>(i)];
    const double w = weights[static_cast<std::size_t>(i)];
    value += w * (y == 1 ? softplus(-x) : softplus(x));
    d(i, 0) = w * (sigmoid(x) - y) / wsum;
  }
  ad::Graph& g = logits.graph();
  return g.record(ad::Matrix::Constant(1, 1, value / wsum), {logits}, [&g, logits, d = std::move(d)](const ad::Matrix& dy) {
    g.accumulate(logits, d * dy(0, 0));
  }, "weighted_bce");
}

JointLoss joint_loss(ad::Var trajectories, ad::Var logits, std::span<const int> labels, double tau,
                     const FocalParams& focal) {
  ad::Var sup = supcon_loss(trajectories, labels, tau);
  ad::Var foc = focal_loss(logits, labels, focal);
  ad::Var total = ad::add(ad::scale(sup, 0.5), ad::scale(foc, 0.5));
  return {total, sup.scalar(), foc.scalar()};
}

}  // namespace trajret
