#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "trajret/volume.hpp"

namespace trajret {

enum class Sex { M, F };

const char* to_string(Sex s);
Sex sex_from_string(const std::string& s);

struct SubjectRecord {
  std::string subject_id;
  double age = 0.0;
  Sex sex = Sex::M;
  int label = 0;  // 0 = favourable proxy outcome
  Volume pre_volume;
  Volume post_volume;

  bool operator==(const SubjectRecord&) const = default;
};

using Cohort = std::vector<SubjectRecord>;

struct CohortSpec {
  int n_subjects = 268;
  double positive_fraction = 53.0 / 268.0;
  int volume_dim = 16;
  /// Distance between the class-conditional cavity location means, in units
  /// of the location jitter.
  double class_separation = 3.0;
  /// Amplitude of the label-independent smooth intensity drift added to post.
  double nuisance_scale = 1.0;
  std::uint64_t seed = 42;

  int positive_count() const;
  /// Throws ConfigError naming the first violated field.
  void validate() const;

  bool operator==(const CohortSpec&) const = default;
};

/// Mean offset (before sign randomization) of the planted cavity for a class.
Eigen::Vector3d planted_location_mean(const CohortSpec& spec, int label);

/// Deterministic synthetic cohort; each subject draws from its own stream
/// derived from (seed, index).
Cohort generate_cohort(const CohortSpec& spec);

/// Checks the per-record invariants and id uniqueness.
void validate_cohort(const Cohort& cohort);

/// JSON-lines cohort file. The header line carries the generating spec when known.
void write_cohort(const std::filesystem::path& path, const Cohort& cohort,
                  const std::optional<CohortSpec>& spec = std::nullopt);

struct CohortFile {
  std::optional<CohortSpec> spec;
  Cohort subjects;
};

CohortFile read_cohort_file(const std::filesystem::path& path);
Cohort read_cohort(const std::filesystem::path& path);

}  // namespace trajret
