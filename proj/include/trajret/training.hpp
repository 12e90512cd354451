#pragma once

#include <functional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "trajret/encoder.hpp"
#include "trajret/synthdata.hpp"

namespace trajret {

struct EpochLog {
  int epoch = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_supcon = 0.0;
  double train_focal = 0.0;
  double val_loss = 0.0;
  double val_supcon = 0.0;
  double val_focal = 0.0;
};

struct TrainResult {
  SiameseEncoder encoder;  // best checkpoint, optimizer state dropped
  std::vector<EpochLog> history;
  int best_epoch = -1;     // -1 when no epoch ran
  double initial_train_loss = 0.0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Subjects must already be preprocessed to cfg.volume_dim. Any subject whose
/// id is in `heldout_ids` raises LeakageError. A stratified validation split
/// (cfg.validation_fraction) selects the checkpoint with the lowest joint loss.
TrainResult train_encoder(std::span<const SubjectRecord> subjects, const EncoderConfig& cfg,
                          const std::unordered_set<std::string>& heldout_ids = {},
                          const EpochCallback& on_epoch = {});

/// Joint loss of an encoder in inference mode on the given subjects.
struct LossBreakdown {
  double total = 0.0;
  double supcon = 0.0;
  double focal = 0.0;
};
LossBreakdown evaluate_joint_loss(const SiameseEncoder& encoder, std::span<const SubjectRecord> subjects);

/// z-score both volumes and crop/pad them to `dim`.
SubjectRecord preprocess(const SubjectRecord& s, int dim);
Cohort preprocess(const Cohort& cohort, int dim);

}  // namespace trajret
