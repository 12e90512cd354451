#include "trajret/config.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "trajret/error.hpp"

namespace trajret {

using nlohmann::json;

StrictObject::StrictObject(const json& j, std::string section) : j_(j), section_(std::move(section)) {
  if (!j_.is_object()) throw ConfigError(section_, section_, "must be a JSON object");
}

const json& StrictObject::raw(const std::string& key) {
  seen_.push_back(key);
  return j_.at(key);
}

void StrictObject::finish() const {
  for (const auto& [key, _] : j_.items()) {
    if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
      throw ConfigError(section_, section_ + "." + key, "unknown key");
    }
  }
}

json to_json(const CohortSpec& s) {
  return {{"n_subjects", s.n_subjects},
          {"positive_fraction", s.positive_fraction},
          {"volume_dim", s.volume_dim},
          {"class_separation", s.class_separation},
          {"nuisance_scale", s.nuisance_scale},
          {"seed", s.seed}};
}

void merge_json(const json& j, CohortSpec& s, const std::string& section) {
  StrictObject o(j, section);
  o.read("n_subjects", s.n_subjects);
  o.read("positive_fraction", s.positive_fraction);
  o.read("volume_dim", s.volume_dim);
  o.read("class_separation", s.class_separation);
  o.read("nuisance_scale", s.nuisance_scale);
  o.read("seed", s.seed);
  o.finish();
}

json to_json(const EncoderConfig& c) {
  return {{"volume_dim", c.volume_dim},
          {"backbone_widths", c.backbone_widths},
          {"projection_hidden", c.projection_hidden},
          {"trajectory_dim", c.trajectory_dim},
          {"projection_dropout", c.projection_dropout},
          {"classifier_widths", c.classifier_widths},
          {"bias_init", c.bias_init},
          {"temperature", c.temperature},
          {"focal", {{"gamma", c.focal.gamma}, {"alpha", c.focal.alpha}, {"class_weight", c.focal.class_weight}}},
          {"epochs", c.epochs},
          {"micro_batch", c.micro_batch},
          {"batchnorm_mode", to_string(c.batchnorm_mode)},
          {"validation_fraction", c.validation_fraction},
          {"optimizer",
           {{"learning_rate", c.optimizer.learning_rate},
            {"weight_decay", c.optimizer.weight_decay},
            {"beta1", c.optimizer.beta1},
            {"beta2", c.optimizer.beta2},
            {"epsilon", c.optimizer.epsilon},
            {"cosine_t_max", c.optimizer.cosine_t_max},
            {"clip_norm", c.optimizer.clip_norm},
            {"accumulation_steps", c.optimizer.accumulation_steps}}},
          {"augmentation",
           {{"flip_probability", c.augmentation.flip_probability},
            {"noise_sigma_min", c.augmentation.noise_sigma_min},
            {"noise_sigma_max", c.augmentation.noise_sigma_max},
            {"scale_min", c.augmentation.scale_min},
            {"scale_max", c.augmentation.scale_max}}},
          {"seed", c.seed}};
}

void merge_json(const json& j, EncoderConfig& c, const std::string& section) {
  StrictObject o(j, section);
  o.read("volume_dim", c.volume_dim);
  o.read("backbone_widths", c.backbone_widths);
  o.read("projection_hidden", c.projection_hidden);
  o.read("trajectory_dim", c.trajectory_dim);
  o.read("projection_dropout", c.projection_dropout);
  o.read("classifier_widths", c.classifier_widths);
  o.read("bias_init", c.bias_init);
  o.read("temperature", c.temperature);
  if (o.has("focal")) {
    StrictObject f(o.raw("focal"), section + ".focal");
    f.read("gamma", c.focal.gamma);
    f.read("alpha", c.focal.alpha);
    f.read("class_weight", c.focal.class_weight);
    f.finish();
  }
  o.read("epochs", c.epochs);
  o.read("micro_batch", c.micro_batch);
  if (o.has("batchnorm_mode")) {
    std::string mode;
    o.read("batchnorm_mode", mode);
    c.batchnorm_mode = batchnorm_mode_from_string(mode);
  }
  o.read("validation_fraction", c.validation_fraction);
  if (o.has("optimizer")) {
    StrictObject p(o.raw("optimizer"), section + ".optimizer");
    p.read("learning_rate", c.optimizer.learning_rate);
    p.read("weight_decay", c.optimizer.weight_decay);
    p.read("beta1", c.optimizer.beta1);
    p.read("beta2", c.optimizer.beta2);
    p.read("epsilon", c.optimizer.epsilon);
    p.read("cosine_t_max", c.optimizer.cosine_t_max);
    p.read("clip_norm", c.optimizer.clip_norm);
    p.read("accumulation_steps", c.optimizer.accumulation_steps);
    p.finish();
  }
  if (o.has("augmentation")) {
    StrictObject a(o.raw("augmentation"), section + ".augmentation");
    a.read("flip_probability", c.augmentation.flip_probability);
    a.read("noise_sigma_min", c.augmentation.noise_sigma_min);
    a.read("noise_sigma_max", c.augmentation.noise_sigma_max);
    a.read("scale_min", c.augmentation.scale_min);
    a.read("scale_max", c.augmentation.scale_max);
    a.finish();
  }
  o.read("seed", c.seed);
  o.finish();
}

json to_json(const OracleConfig& c) {
  return {{"k", c.k},
          {"age_gap", std::isfinite(c.age_gap) ? json(c.age_gap) : json(nullptr)},
          {"neighbor_weight", c.neighbor_weight},
          {"p_success", c.p_success},
          {"p_failure", c.p_failure},
          {"threshold", c.threshold}};
}

void merge_json(const json& j, OracleConfig& c, const std::string& section) {
  StrictObject o(j, section);
  o.read("k", c.k);
  if (o.has("age_gap")) {
    const json& gap = o.raw("age_gap");
    // null or "inf" disables the filter
    if (gap.is_null() || (gap.is_string() && gap.get<std::string>() == "inf")) {
      c.age_gap = std::numeric_limits<double>::infinity();
    } else if (gap.is_number()) {
      c.age_gap = gap.get<double>();
    } else {
      throw ConfigError(section, section + ".age_gap", "must be a number, null, or \"inf\"");
    }
  }
  o.read("neighbor_weight", c.neighbor_weight);
  o.read("p_success", c.p_success);
  o.read("p_failure", c.p_failure);
  o.read("threshold", c.threshold);
  o.finish();
}

json to_json(const MlpConfig& c) {
  return {{"hidden", c.hidden},
          {"alpha", c.alpha},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"max_epochs", c.max_epochs},
          {"patience", c.patience},
          {"validation_fraction", c.validation_fraction},
          {"seed", c.seed}};
}

void merge_json(const json& j, MlpConfig& c, const std::string& section) {
  StrictObject o(j, section);
  o.read("hidden", c.hidden);
  o.read("alpha", c.alpha);
  o.read("learning_rate", c.learning_rate);
  o.read("batch_size", c.batch_size);
  o.read("max_epochs", c.max_epochs);
  o.read("patience", c.patience);
  o.read("validation_fraction", c.validation_fraction);
  o.read("seed", c.seed);
  o.finish();
}

}  // namespace trajret
