#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <vector>

#include "trajret/archive.hpp"

namespace trajret {

/// JSON-lines trajectory table: a header line with `provenance`, then one
/// record per subject (id, label, age, sex, trajectory).
void write_embeddings(const std::filesystem::path& path, const std::vector<ArchiveEntry>& rows,
                      const nlohmann::json& provenance);

struct EmbeddingsFile {
  nlohmann::json provenance;
  std::vector<ArchiveEntry> rows;
};

EmbeddingsFile read_embeddings(const std::filesystem::path& path);

}  // namespace trajret
