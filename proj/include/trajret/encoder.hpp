#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "trajret/checkpoint.hpp"
#include "trajret/diffkernel.hpp"
#include "trajret/losses.hpp"
#include "trajret/optimizer.hpp"
#include "trajret/random.hpp"
#include "trajret/volume.hpp"

namespace trajret {

/// How batch normalization in the projection head forms its statistics
/// during training.
enum class BatchNormMode {
  EffectiveBatch,  // one group per optimizer step
  MicroBatch,      // one group per physical micro-batch
  Identity,        // batch norm replaced by identity
};

const char* to_string(BatchNormMode m);
BatchNormMode batchnorm_mode_from_string(const std::string& s);

struct AugmentationConfig {
  double flip_probability = 0.5;
  double noise_sigma_min = 0.02;
  double noise_sigma_max = 0.08;
  double scale_min = 0.85;
  double scale_max = 1.15;

  void validate() const;
};

struct EncoderConfig {
  int volume_dim = 16;
  std::vector<int> backbone_widths{256, 2048};
  int projection_hidden = 512;
  int trajectory_dim = 512;
  double projection_dropout = 0.3;
  std::vector<int> classifier_widths{256, 128};
  double bias_init = 0.01;

  double temperature = 0.07;
  FocalParams focal{};

  int epochs = 50;
  int micro_batch = 2;
  BatchNormMode batchnorm_mode = BatchNormMode::EffectiveBatch;
  double validation_fraction = 0.2;
  ad::OptimizerConfig optimizer{};
  AugmentationConfig augmentation{};
  std::uint64_t seed = 42;

  int input_size() const { return volume_dim * volume_dim * volume_dim; }
  int feature_dim() const { return backbone_widths.empty() ? input_size() : backbone_widths.back(); }
  int effective_batch() const { return micro_batch * optimizer.accumulation_steps; }
  void validate() const;
};

struct TrajectoryVector {
  std::string subject_id;
  Eigen::VectorXd values;
};

/// Shared-weight encoder: backbone applied to both timepoints, difference
/// projected by an MLP head and L2-normalized. A training-only classification
/// head maps trajectories to one logit.
class SiameseEncoder {
 public:
  struct Dense {
    ad::Parameter weight;
    ad::Parameter bias;
  };

  /// Gaussian (He) initialization, constant small biases.
  static SiameseEncoder initialize(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  // Graph path (training and gradient checks).
  ad::Var backbone(ad::Graph& g, ad::Var x);
  ad::Var trajectories(ad::Graph& g, ad::Var pre, ad::Var post, bool training, Rng& rng);
  ad::Var classify(ad::Graph& g, ad::Var trajectories);

  // Plain inference path; safe for concurrent use.
  ad::Matrix backbone_features(const ad::Matrix& x) const;
  /// Rows of pre/post are flattened volumes; returns unit-norm rows.
  ad::Matrix encode_rows(const ad::Matrix& pre, const ad::Matrix& post) const;
  ad::Matrix classify_rows(const ad::Matrix& trajectories) const;
  TrajectoryVector encode_pair(const Volume& pre, const Volume& post,
                               std::string subject_id = {}) const;

  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> backbone_parameters() const;

  ad::Checkpoint to_checkpoint(const std::string& config_json) const;
  static SiameseEncoder from_checkpoint(const ad::Checkpoint& ckpt, const EncoderConfig& cfg);

  /// Copy of the weights and running statistics without optimizer state.
  SiameseEncoder frozen_copy() const;

 private:
  EncoderConfig cfg_;
  std::vector<Dense> backbone_;
  Dense project_in_;
  ad::Parameter bn_gamma_;
  ad::Parameter bn_beta_;
  ad::BatchNormStats bn_stats_;
  Dense project_out_;
  std::vector<Dense> classifier_;
};

/// Stack flattened volumes into rows.
ad::Matrix volumes_to_rows(const std::vector<const Volume*>& volumes);

/// One shared draw of (flip axes, noise sigma, intensity scale) applied to both
/// volumes; noise is sampled independently per volume.
std::pair<Volume, Volume> augment_pair(const Volume& pre, const Volume& post,
                                       const AugmentationConfig& cfg, Rng& rng);

}  // namespace trajret
