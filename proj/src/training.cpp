#include "trajret/training.hpp"

#include <algorithm>
#include <cmath>

#include "trajret/error.hpp"

namespace trajret {

namespace {

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

Split stratified_holdout(std::span<const SubjectRecord> subjects, double fraction, Rng& rng) {
  Split split;
  for (int label : {0, 1}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (subjects[i].label == label) members.push_back(i);
    }
    rng.shuffle(members.begin(), members.end());
    std::size_t n_val = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
    if (fraction > 0.0) n_val = std::max<std::size_t>(n_val, 1);
    n_val = std::min(n_val, members.size() >= 2 ? members.size() - 2 : 0);
    split.validation.insert(split.validation.end(), members.begin(), members.begin() + static_cast<long>(n_val));
    split.train.insert(split.train.end(), members.begin() + static_cast<long>(n_val), members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

// Batches of roughly `batch` subjects; each class is dealt round-robin so the
// minority class lands in every batch when it has enough members.
std::vector<std::vector<std::size_t>> stratified_batches(std::span<const SubjectRecord> subjects,
                                                         const std::vector<std::size_t>& pool,
                                                         int batch, Rng& rng) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i : pool) (subjects[i].label == 1 ? pos : neg).push_back(i);
  rng.shuffle(pos.begin(), pos.end());
  rng.shuffle(neg.begin(), neg.end());
  const std::size_t nb = std::max<std::size_t>(1, (pool.size() + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
  std::vector<std::vector<std::size_t>> batches(nb);
  for (std::size_t i = 0; i < pos.size(); ++i) batches[i % nb].push_back(pos[i]);
  for (std::size_t i = 0; i < neg.size(); ++i) batches[(nb - 1 - i % nb)].push_back(neg[i]);
  for (auto& b : batches) rng.shuffle(b.begin(), b.end());
  return batches;
}

LossBreakdown inference_loss(const SiameseEncoder& enc, std::span<const SubjectRecord> subjects,
                             const std::vector<std::size_t>& idx) {
  std::vector<const Volume*> pre, post;
  std::vector<int> labels;
  for (std::size_t i : idx) {
    pre.push_back(&subjects[i].pre_volume);
    post.push_back(&subjects[i].post_volume);
    labels.push_back(subjects[i].label);
  }
  const ad::Matrix z = enc.encode_rows(volumes_to_rows(pre), volumes_to_rows(post));
  const ad::Matrix logits = enc.classify_rows(z);
  LossBreakdown out;
  const auto positives = std::count(labels.begin(), labels.end(), 1);
  const auto negatives = static_cast<std::ptrdiff_t>(labels.size()) - positives;
  out.supcon = (positives >= 2 || negatives >= 2) ? supcon_loss_value(z, labels, enc.config().temperature) : 0.0;
  out.focal = focal_loss_value(logits, labels, enc.config().focal);
  out.total = 0.5 * out.supcon + 0.5 * out.focal;
  return out;
}

}  // namespace

SubjectRecord preprocess(const SubjectRecord& s, int dim) {
  SubjectRecord out = s;
  out.pre_volume = crop_or_pad(zscore_normalize(s.pre_volume), dim);
  out.post_volume = crop_or_pad(zscore_normalize(s.post_volume), dim);
  return out;
}

Cohort preprocess(const Cohort& cohort, int dim) {
  Cohort out;
  out.reserve(cohort.size());
  for (const auto& s : cohort) out.push_back(preprocess(s, dim));
  return out;
}

LossBreakdown evaluate_joint_loss(const SiameseEncoder& encoder, std::span<const SubjectRecord> subjects) {
  std::vector<std::size_t> idx(subjects.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return inference_loss(encoder, subjects, idx);
}

TrainResult train_encoder(std::span<const SubjectRecord> subjects, const EncoderConfig& cfg,
                          const std::unordered_set<std::string>& heldout_ids,
                          const EpochCallback& on_epoch) {
  cfg.validate();
  int counts[2] = {0, 0};
  for (const auto& s : subjects) {
    if (heldout_ids.contains(s.subject_id)) throw LeakageError(s.subject_id, "encoder training");
    if (s.pre_volume.dim != cfg.volume_dim || s.post_volume.dim != cfg.volume_dim) {
      throw ShapeError("encoder", s.subject_id + ": volume dim does not match encoder config");
    }
    if (s.label != 0 && s.label != 1) throw ConfigError("encoder", "label", s.subject_id + " has a non-binary label");
    ++counts[s.label];
  }
  if (counts[0] == 0 || counts[1] == 0) throw ConfigError("encoder", "training data", "both classes must be present");

  SiameseEncoder model = SiameseEncoder::initialize(cfg, cfg.seed);
  Rng split_rng = Rng::stream(cfg.seed, 0x5F117);
  const Split split = stratified_holdout(subjects, cfg.validation_fraction, split_rng);

  TrainResult result;
  result.initial_train_loss = inference_loss(model, subjects, split.train).total;
  if (cfg.epochs == 0) {
    result.encoder = model.frozen_copy();
    return result;
  }

  auto params = model.parameters();
  for (auto* p : params) p->zero_grad();
  double best_val = std::numeric_limits<double>::infinity();
  Rng rng = Rng::stream(cfg.seed, 0x7A1E);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = ad::cosine_lr(cfg.optimizer, epoch);
    EpochLog log;
    log.epoch = epoch + 1;
    log.learning_rate = lr;
    const auto batches = stratified_batches(subjects, split.train, cfg.effective_batch(), rng);
    int counted = 0;
    for (const auto& batch : batches) {
      std::vector<int> labels;
      for (std::size_t i : batch) labels.push_back(subjects[i].label);
      const bool has_pair = (std::count(labels.begin(), labels.end(), 1) >= 2) ||
                            (std::count(labels.begin(), labels.end(), 0) >= 2);
      if (batch.size() < 2 || !has_pair) continue;
      std::vector<Volume> pre_aug, post_aug;
      pre_aug.reserve(batch.size());
      post_aug.reserve(batch.size());
      for (std::size_t i : batch) {
        auto [a, b] = augment_pair(subjects[i].pre_volume, subjects[i].post_volume, cfg.augmentation, rng);
        pre_aug.push_back(std::move(a));
        post_aug.push_back(std::move(b));
      }
      std::vector<const Volume*> pre_ptr, post_ptr;
      for (std::size_t k = 0; k < batch.size(); ++k) {
        pre_ptr.push_back(&pre_aug[k]);
        post_ptr.push_back(&post_aug[k]);
      }
      ad::Graph g;
      ad::Var pre = g.constant(volumes_to_rows(pre_ptr));
      ad::Var post = g.constant(volumes_to_rows(post_ptr));
      ad::Var z = model.trajectories(g, pre, post, /*training=*/true, rng);
      ad::Var logits = model.classify(g, z);
      JointLoss loss = joint_loss(z, logits, labels, cfg.temperature, cfg.focal);
      g.backward(loss.total);
      ad::clip_grad_norm(params, cfg.optimizer.clip_norm);
      ad::adamw_update(params, cfg.optimizer, lr);
      for (auto* p : params) p->zero_grad();
      log.train_loss += loss.total.scalar();
      log.train_supcon += loss.supcon;
      log.train_focal += loss.focal;
      ++counted;
    }
    if (counted > 0) {
      log.train_loss /= counted;
      log.train_supcon /= counted;
      log.train_focal /= counted;
    }
    const LossBreakdown val =
        split.validation.size() >= 2 ? inference_loss(model, subjects, split.validation)
                                     : inference_loss(model, subjects, split.train);
    log.val_loss = val.total;
    log.val_supcon = val.supcon;
    log.val_focal = val.focal;
    result.history.push_back(log);
    if (on_epoch) on_epoch(log);
    if (val.total < best_val) {
      best_val = val.total;
      result.best_epoch = log.epoch;
      result.encoder = model.frozen_copy();
    }
  }
  return result;
}

}  // namespace trajret
