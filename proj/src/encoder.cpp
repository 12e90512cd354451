#include "trajret/encoder.hpp"

#include <cmath>

#include "trajret/error.hpp"

namespace trajret {

namespace {

SiameseEncoder::Dense make_dense(const std::string& name, int in, int out, double bias, Rng& rng) {
  ad::Matrix w(in, out);
  const double stddev = std::sqrt(2.0 / in);
  for (Eigen::Index c = 0; c < w.cols(); ++c) {
    for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = rng.normal(0.0, stddev);
  }
  return {ad::Parameter(name + ".weight", std::move(w)),
          ad::Parameter(name + ".bias", ad::Matrix::Constant(1, out, bias))};
}

ad::Var dense(ad::Graph& g, SiameseEncoder::Dense& layer, ad::Var x) {
  return ad::dense(x, g.param(layer.weight), g.param(layer.bias));
}

ad::Matrix dense_rows(const SiameseEncoder::Dense& layer, const ad::Matrix& x) {
  ad::Matrix y = x * layer.weight.value;
  y.rowwise() += layer.bias.value.row(0);
  return y;
}

// Drops gradient and moment buffers; they are re-created on demand.
void strip(ad::Parameter& p) {
  p.grad.resize(0, 0);
  p.first_moment.resize(0, 0);
  p.second_moment.resize(0, 0);
  p.steps = 0;
}

}  // namespace

const char* to_string(BatchNormMode m) {
  switch (m) {
    case BatchNormMode::EffectiveBatch: return "effective-batch";
    case BatchNormMode::MicroBatch: return "micro-batch";
    case BatchNormMode::Identity: return "identity";
  }
  return "?";
}

BatchNormMode batchnorm_mode_from_string(const std::string& s) {
  if (s == "effective-batch") return BatchNormMode::EffectiveBatch;
  if (s == "micro-batch") return BatchNormMode::MicroBatch;
  if (s == "identity") return BatchNormMode::Identity;
  throw ConfigError("encoder", "batchnorm_mode", "unknown mode '" + s + "'");
}

void AugmentationConfig::validate() const {
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) {
    throw ConfigError("encoder", "flip_probability", "must be in [0, 1]");
  }
  if (!(noise_sigma_min >= 0.0 && noise_sigma_min <= noise_sigma_max)) {
    throw ConfigError("encoder", "noise_sigma", "range must be ordered and non-negative");
  }
  if (!(scale_min > 0.0 && scale_min <= scale_max)) {
    throw ConfigError("encoder", "intensity_scale", "range must be ordered and positive");
  }
}

void EncoderConfig::validate() const {
  if (volume_dim < 4) throw ConfigError("encoder", "volume_dim", "must be >= 4");
  for (int w : backbone_widths) {
    if (w < 1) throw ConfigError("encoder", "backbone_widths", "widths must be positive");
  }
  if (projection_hidden < 1) throw ConfigError("encoder", "projection_hidden", "must be positive");
  if (trajectory_dim < 2) throw ConfigError("encoder", "trajectory_dim", "must be >= 2");
  if (!(projection_dropout >= 0.0 && projection_dropout < 1.0)) {
    throw ConfigError("encoder", "projection_dropout", "must be in [0, 1)");
  }
  for (int w : classifier_widths) {
    if (w < 1) throw ConfigError("encoder", "classifier_widths", "widths must be positive");
  }
  if (!(temperature > 0.0)) throw ConfigError("encoder", "temperature", "must be > 0");
  if (!(focal.gamma >= 0.0)) throw ConfigError("encoder", "focal_gamma", "must be >= 0");
  if (!(focal.alpha > 0.0 && focal.alpha < 1.0)) throw ConfigError("encoder", "focal_alpha", "must be in (0, 1)");
  if (!(focal.class_weight > 0.0)) throw ConfigError("encoder", "positive_class_weight", "must be > 0");
  if (epochs < 0) throw ConfigError("encoder", "epochs", "must be >= 0");
  if (micro_batch < 2 && batchnorm_mode == BatchNormMode::MicroBatch) {
    throw ConfigError("encoder", "micro_batch", "micro-batch batch norm needs >= 2 rows");
  }
  if (micro_batch < 1) throw ConfigError("encoder", "micro_batch", "must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
    throw ConfigError("encoder", "validation_fraction", "must be in [0, 1)");
  }
  optimizer.validate();
  augmentation.validate();
}

SiameseEncoder SiameseEncoder::initialize(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SiameseEncoder e;
  e.cfg_ = cfg;
  Rng rng = Rng::stream(seed, 0xE9C0DE);
  int in = cfg.input_size();
  for (std::size_t i = 0; i < cfg.backbone_widths.size(); ++i) {
    e.backbone_.push_back(make_dense("backbone." + std::to_string(i), in, cfg.backbone_widths[i], cfg.bias_init, rng));
    in = cfg.backbone_widths[i];
  }
  e.project_in_ = make_dense("projection.in", in, cfg.projection_hidden, cfg.bias_init, rng);
  e.bn_gamma_ = ad::Parameter("projection.bn.gamma", ad::Matrix::Ones(1, cfg.projection_hidden));
  e.bn_beta_ = ad::Parameter("projection.bn.beta", ad::Matrix::Zero(1, cfg.projection_hidden));
  e.bn_stats_ = ad::BatchNormStats(cfg.projection_hidden);
  e.project_out_ = make_dense("projection.out", cfg.projection_hidden, cfg.trajectory_dim, cfg.bias_init, rng);
  in = cfg.trajectory_dim;
  for (std::size_t i = 0; i < cfg.classifier_widths.size(); ++i) {
    e.classifier_.push_back(make_dense("classifier." + std::to_string(i), in, cfg.classifier_widths[i], cfg.bias_init, rng));
    in = cfg.classifier_widths[i];
  }
  e.classifier_.push_back(make_dense("classifier." + std::to_string(cfg.classifier_widths.size()), in, 1, cfg.bias_init, rng));
  return e;
}

ad::Var SiameseEncoder::backbone(ad::Graph& g, ad::Var x) {
  if (x.cols() != cfg_.input_size()) throw ShapeError("encoder", "input width does not match volume_dim^3");
  for (auto& layer : backbone_) x = ad::relu(dense(g, layer, x));
  return x;
}

ad::Var SiameseEncoder::trajectories(ad::Graph& g, ad::Var pre, ad::Var post, bool training, Rng& rng) {
  ad::Var diff = ad::sub(backbone(g, post), backbone(g, pre));
  ad::Var h = dense(g, project_in_, diff);
  if (cfg_.batchnorm_mode != BatchNormMode::Identity) {
    const Eigen::Index group = cfg_.batchnorm_mode == BatchNormMode::MicroBatch ? cfg_.micro_batch : 0;
    h = ad::batchnorm(h, g.param(bn_gamma_), g.param(bn_beta_), bn_stats_, training, group);
  }
  h = ad::dropout(ad::relu(h), cfg_.projection_dropout, training, rng);
  return ad::l2_normalize(dense(g, project_out_, h));
}

ad::Var SiameseEncoder::classify(ad::Graph& g, ad::Var z) {
  for (std::size_t i = 0; i < classifier_.size(); ++i) {
    z = dense(g, classifier_[i], z);
    if (i + 1 < classifier_.size()) z = ad::relu(z);
  }
  return z;
}

ad::Matrix SiameseEncoder::backbone_features(const ad::Matrix& x) const {
  if (x.cols() != cfg_.input_size()) throw ShapeError("encoder", "input width does not match volume_dim^3");
  ad::Matrix h = x;
  for (const auto& layer : backbone_) h = dense_rows(layer, h).cwiseMax(0.0);
  return h;
}

ad::Matrix SiameseEncoder::encode_rows(const ad::Matrix& pre, const ad::Matrix& post) const {
  if (pre.rows() != post.rows()) throw ShapeError("encoder", "pre/post batch sizes differ");
  ad::Matrix h = dense_rows(project_in_, backbone_features(post) - backbone_features(pre));
  if (cfg_.batchnorm_mode != BatchNormMode::Identity) {
    const ad::RowVector a =
        bn_gamma_.value.row(0).cwiseProduct((bn_stats_.running_var.array() + bn_stats_.epsilon).rsqrt().matrix());
    h = (h.rowwise() - bn_stats_.running_mean).array().rowwise() * a.array();
    h.rowwise() += bn_beta_.value.row(0);
  }
  ad::Matrix z = dense_rows(project_out_, h.cwiseMax(0.0));
  const Eigen::VectorXd norms = z.rowwise().norm();
  for (Eigen::Index r = 0; r < norms.size(); ++r) {
    if (!(norms[r] > 0.0) || !std::isfinite(norms[r])) {
      throw NumericError("encoder", "projection produced a zero or non-finite trajectory");
    }
  }
  return norms.cwiseInverse().asDiagonal() * z;
}

ad::Matrix SiameseEncoder::classify_rows(const ad::Matrix& z) const {
  ad::Matrix h = z;
  for (std::size_t i = 0; i < classifier_.size(); ++i) {
    h = dense_rows(classifier_[i], h);
    if (i + 1 < classifier_.size()) h = h.cwiseMax(0.0);
  }
  return h;
}

TrajectoryVector SiameseEncoder::encode_pair(const Volume& pre, const Volume& post,
                                             std::string subject_id) const {
  if (pre.dim != cfg_.volume_dim || post.dim != cfg_.volume_dim) {
    throw ShapeError("encoder", "volume dim " + std::to_string(pre.dim) + "/" + std::to_string(post.dim) +
                                    " does not match encoder dim " + std::to_string(cfg_.volume_dim));
  }
  const ad::Matrix z = encode_rows(pre.voxels.transpose(), post.voxels.transpose());
  return {std::move(subject_id), z.row(0).transpose()};
}

std::vector<ad::Parameter*> SiameseEncoder::parameters() {
  std::vector<ad::Parameter*> out;
  for (auto& l : backbone_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  out.push_back(&project_in_.weight);
  out.push_back(&project_in_.bias);
  out.push_back(&bn_gamma_);
  out.push_back(&bn_beta_);
  out.push_back(&project_out_.weight);
  out.push_back(&project_out_.bias);
  for (auto& l : classifier_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const ad::Parameter*> SiameseEncoder::backbone_parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const auto& l : backbone_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

ad::Checkpoint SiameseEncoder::to_checkpoint(const std::string& config_json) const {
  ad::Checkpoint ckpt;
  ckpt.config_json = config_json;
  auto self = const_cast<SiameseEncoder*>(this)->parameters();
  for (const ad::Parameter* p : self) ckpt.tensors.push_back({p->name, p->value});
  ckpt.tensors.push_back({"projection.bn.running_mean", bn_stats_.running_mean});
  ckpt.tensors.push_back({"projection.bn.running_var", bn_stats_.running_var});
  return ckpt;
}

SiameseEncoder SiameseEncoder::from_checkpoint(const ad::Checkpoint& ckpt, const EncoderConfig& cfg) {
  SiameseEncoder e = initialize(cfg, 0);
  for (ad::Parameter* p : e.parameters()) {
    const ad::Matrix& v = ckpt.at(p->name);
    if (v.rows() != p->value.rows() || v.cols() != p->value.cols()) {
      throw ParseError("encoder", "checkpoint tensor " + p->name + " has the wrong shape");
    }
    p->value = v;
  }
  const ad::Matrix& rm = ckpt.at("projection.bn.running_mean");
  const ad::Matrix& rv = ckpt.at("projection.bn.running_var");
  if (rm.cols() != cfg.projection_hidden || rv.cols() != cfg.projection_hidden) {
    throw ParseError("encoder", "checkpoint running statistics have the wrong shape");
  }
  e.bn_stats_.running_mean = rm.row(0);
  e.bn_stats_.running_var = rv.row(0);
  return e;
}

SiameseEncoder SiameseEncoder::frozen_copy() const {
  SiameseEncoder copy = *this;
  for (ad::Parameter* p : copy.parameters()) strip(*p);
  return copy;
}

ad::Matrix volumes_to_rows(const std::vector<const Volume*>& volumes) {
  if (volumes.empty()) return {};
  const Eigen::Index width = volumes.front()->voxels.size();
  ad::Matrix rows(static_cast<Eigen::Index>(volumes.size()), width);
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    if (volumes[i]->voxels.size() != width) throw ShapeError("encoder", "volumes of mixed size in one batch");
    rows.row(static_cast<Eigen::Index>(i)) = volumes[i]->voxels.transpose();
  }
  return rows;
}

std::pair<Volume, Volume> augment_pair(const Volume& pre, const Volume& post,
                                       const AugmentationConfig& cfg, Rng& rng) {
  if (pre.dim != post.dim) throw ShapeError("encoder", "augment_pair: pre/post dims differ");
  std::array<bool, 3> axes{};
  for (auto& a : axes) a = rng.uniform() < cfg.flip_probability;
  const double sigma = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
  const double factor = rng.uniform(cfg.scale_min, cfg.scale_max);
  auto apply = [&](const Volume& v) {
    Volume out = flip(v, axes);
    out.voxels *= factor;
    if (sigma > 0.0) {
      for (Eigen::Index i = 0; i < out.voxels.size(); ++i) out.voxels[i] += rng.normal(0.0, sigma);
    }
    return out;
  };
  Volume a = apply(pre);
  Volume b = apply(post);
  return {std::move(a), std::move(b)};
}

}  // namespace trajret
