#pragma once

#include <span>

#include "trajret/diffkernel.hpp"

namespace trajret::ad {

struct OptimizerConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int cosine_t_max = 50;
  double clip_norm = 1.0;
  int accumulation_steps = 8;

  void validate() const;
};

/// Cosine annealing to zero: lr0 * (1 + cos(pi * epoch / t_max)) / 2.
double cosine_lr(const OptimizerConfig& cfg, int epoch);

/// Global L2 norm of all gradients.
double global_grad_norm(std::span<Parameter* const> params);

/// Rescales gradients so their global norm is at most max_norm. Returns the
/// norm measured before clipping.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

/// One AdamW update at the given learning rate. Weight decay multiplies the
/// weights directly and never enters the moment estimates.
void adamw_update(std::span<Parameter* const> params, const OptimizerConfig& cfg, double lr);

/// Clip, then AdamW at the cosine-scheduled rate for `epoch`.
void optimizer_step(std::span<Parameter* const> params, const OptimizerConfig& cfg, int epoch);

}  // namespace trajret::ad
