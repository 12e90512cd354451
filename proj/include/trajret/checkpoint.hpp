#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "trajret/diffkernel.hpp"

namespace trajret::ad {

struct NamedTensor {
  std::string name;
  Matrix value;
};

/// Binary named-tensor table with a free-form config echo (JSON text).
struct Checkpoint {
  std::string config_json;
  std::vector<NamedTensor> tensors;

  const Matrix& at(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws ParseError on bad magic, version mismatch, truncation, or checksum mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace trajret::ad
