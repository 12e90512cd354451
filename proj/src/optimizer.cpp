#include "trajret/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "trajret/error.hpp"

namespace trajret::ad {

void OptimizerConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("diffkernel", field, "must be positive");
  };
  positive(learning_rate, "learning_rate");
  if (!(weight_decay >= 0.0)) throw ConfigError("diffkernel", "weight_decay", "must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("diffkernel", "beta1", "must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("diffkernel", "beta2", "must be in [0, 1)");
  positive(epsilon, "epsilon");
  if (cosine_t_max < 1) throw ConfigError("diffkernel", "cosine_t_max", "must be >= 1");
  positive(clip_norm, "clip_norm");
  if (accumulation_steps < 1) throw ConfigError("diffkernel", "accumulation_steps", "must be >= 1");
}

double cosine_lr(const OptimizerConfig& cfg, int epoch) {
  const double t = std::min(epoch, cfg.cosine_t_max);
  return 0.5 * cfg.learning_rate * (1.0 + std::cos(std::numbers::pi * t / cfg.cosine_t_max));
}

double global_grad_norm(std::span<Parameter* const> params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    if (p->grad.size() == p->value.size()) sq += p->grad.squaredNorm();
  }
  return std::sqrt(sq);
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("diffkernel", "non-finite gradient norm");
  if (norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (Parameter* p : params) {
      if (p->grad.size() == p->value.size()) p->grad *= factor;
    }
  }
  return norm;
}

void adamw_update(std::span<Parameter* const> params, const OptimizerConfig& cfg, double lr) {
  for (Parameter* p : params) {
    if (p->first_moment.rows() != p->value.rows() || p->first_moment.cols() != p->value.cols()) {
      p->first_moment = Matrix::Zero(p->value.rows(), p->value.cols());
      p->second_moment = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    if (p->grad.rows() != p->value.rows() || p->grad.cols() != p->value.cols()) {
      p->grad = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    p->steps += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->steps));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->steps));
    p->value *= (1.0 - lr * cfg.weight_decay);
    p->first_moment = cfg.beta1 * p->first_moment + (1.0 - cfg.beta1) * p->grad;
    p->second_moment = cfg.beta2 * p->second_moment + (1.0 - cfg.beta2) * p->grad.cwiseAbs2();
    const double step = lr / bc1;
    const double denom_scale = 1.0 / std::sqrt(bc2);
    p->value.array() -=
        step * p->first_moment.array() / (p->second_moment.array().sqrt() * denom_scale + cfg.epsilon);
    if (!p->value.allFinite()) throw NumericError("diffkernel", "parameter " + p->name + " became non-finite");
  }
}

void optimizer_step(std::span<Parameter* const> params, const OptimizerConfig& cfg, int epoch) {
  clip_grad_norm(params, cfg.clip_norm);
  adamw_update(params, cfg, cosine_lr(cfg, epoch));
}

}  // namespace trajret::ad
