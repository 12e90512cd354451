#pragma once

#include <span>

#include "trajret/diffkernel.hpp"

namespace trajret {

struct FocalParams {
  double gamma = 2.0;
  double alpha = 0.75;
  /// Extra multiplier on positive samples.
  double class_weight = 4.0;
};

/// Supervised contrastive loss over row-wise unit embeddings, summed over
/// anchors that have at least one same-class partner:
///   sum_i -1/|P(i)| sum_{p in P(i)} log( exp(z_i.z_p / tau) / sum_{a != i} exp(z_i.z_a / tau) )
/// Throws ShapeError for fewer than 2 rows or when no anchor has a partner.
double supcon_loss_value(const ad::Matrix& z, std::span<const int> labels, double tau);
ad::Var supcon_loss(ad::Var z, std::span<const int> labels, double tau);

/// Mean binary focal loss on an (n x 1) logit column.
double focal_loss_value(const ad::Matrix& logits, std::span<const int> labels, const FocalParams& p);
ad::Var focal_loss(ad::Var logits, std::span<const int> labels, const FocalParams& p);

/// Weighted binary cross-entropy with logits: sum_i w_i * bce_i / sum_i w_i.
ad::Var weighted_bce(ad::Var logits, std::span<const int> labels, std::span<const double> weights);

struct JointLoss {
  ad::Var total;
  double supcon = 0.0;
  double focal = 0.0;
};

/// Equal-weight blend 0.5 * supcon + 0.5 * focal.
JointLoss joint_loss(ad::Var trajectories, ad::Var logits, std::span<const int> labels,
                     double tau, const FocalParams& focal);

}  // namespace trajret
