#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <string>
#include <vector>

#include "trajret/encoder.hpp"
#include "trajret/synthdata.hpp"

namespace trajret {

struct ArchiveEntry {
  std::string subject_id;
  Eigen::VectorXd trajectory;
  int label = 0;
  double age = 0.0;
  Sex sex = Sex::M;
};

struct Neighbor {
  std::string subject_id;
  double similarity = 0.0;
  int label = 0;
  double age = 0.0;
  Sex sex = Sex::M;
  std::size_t position = 0;  // insertion order in the archive
};

struct RetrievalResult {
  std::vector<Neighbor> neighbors;
  int k = 0;
};

/// Frozen trajectory store with exact inner-product top-k search. Entries keep
/// their insertion order, which breaks similarity ties.
class PopulationArchive {
 public:
  static constexpr double kUnitTolerance = 1e-6;
  static constexpr std::size_t kIdWidth = 48;

  PopulationArchive() = default;

  /// Throws ConfigError on duplicate ids, non-unit vectors, or mixed dims.
  /// `provenance` is free text (usually JSON) stored with snapshots.
  static PopulationArchive build(std::vector<ArchiveEntry> entries, std::string provenance = {});

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  int dim() const { return static_cast<int>(vectors_.cols()); }
  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  const ArchiveEntry* find(const std::string& subject_id) const;
  const std::string& provenance() const { return provenance_; }

  /// Top-min(k, size) entries by descending dot product, ties by ascending
  /// insertion order. Throws on an empty archive, k < 1, or a non-unit query.
  RetrievalResult search(const Eigen::VectorXd& query, int k) const;

  void save(const std::filesystem::path& path) const;
  static PopulationArchive load(const std::filesystem::path& path);

 private:
  std::vector<ArchiveEntry> entries_;
  Eigen::MatrixXd vectors_;  // one row per entry
  std::string provenance_;
};

}  // namespace trajret
