#pragma once

// A cohort and protocol small enough to run the whole evaluation in seconds.

#include "trajret/crossval.hpp"

namespace small_eval {

inline trajret::CohortSpec cohort_spec(double separation = 4.0, int n = 40) {
  trajret::CohortSpec s;
  s.n_subjects = n;
  s.positive_fraction = 0.3;
  s.volume_dim = 8;
  s.class_separation = separation;
  s.seed = 7;
  return s;
}

inline trajret::EvalConfig config() {
  trajret::EvalConfig c;
  c.encoder.volume_dim = 6;
  c.encoder.backbone_widths = {32, 24};
  c.encoder.projection_hidden = 16;
  c.encoder.trajectory_dim = 8;
  c.encoder.classifier_widths = {8};
  c.encoder.epochs = 3;
  c.encoder.optimizer.learning_rate = 1e-3;
  c.mlp.hidden = {8};
  c.mlp.max_epochs = 20;
  c.methods = {trajret::Method::M4, trajret::Method::M5};
  return c;
}

}  // namespace small_eval
