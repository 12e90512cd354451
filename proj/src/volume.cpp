#include "trajret/volume.hpp"

#include <cmath>
#include <string>

#include "trajret/error.hpp"

namespace trajret {

Volume::Volume(int d, double fill)
    : dim(d), voxels(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(d) * d * d, fill)) {}

Volume::Volume(int d, Eigen::VectorXd values) : dim(d), voxels(std::move(values)) {
  if (voxels.size() != static_cast<Eigen::Index>(d) * d * d) {
    throw ShapeError("volume", "voxel count " + std::to_string(voxels.size()) +
                                   " does not match dim " + std::to_string(d) + "^3");
  }
}

void validate(const Volume& v) {
  if (v.dim < 4) throw ShapeError("volume", "dim must be >= 4, got " + std::to_string(v.dim));
  if (v.voxels.size() != static_cast<Eigen::Index>(v.dim) * v.dim * v.dim) {
    throw ShapeError("volume", "voxel count does not match dim^3");
  }
  if (!v.voxels.allFinite()) throw ShapeError("volume", "non-finite voxel intensity");
}

Volume zscore_normalize(const Volume& v) {
  const double global_mean = v.voxels.mean();
  double sum = 0.0;
  Eigen::Index count = 0;
  for (Eigen::Index i = 0; i < v.voxels.size(); ++i) {
    if (v.voxels[i] > global_mean) {
      sum += v.voxels[i];
      ++count;
    }
  }
  if (count == 0) throw NumericError("volume", "normalization: no voxel above the mean");
  const double mask_mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (Eigen::Index i = 0; i < v.voxels.size(); ++i) {
    if (v.voxels[i] > global_mean) sq += (v.voxels[i] - mask_mean) * (v.voxels[i] - mask_mean);
  }
  const double mask_std = std::sqrt(sq / static_cast<double>(count));
  if (!(mask_std > 0.0)) throw NumericError("volume", "normalization: zero mask deviation");
  Volume out(v.dim);
  out.voxels = (v.voxels.array() - mask_mean) / mask_std;
  return out;
}

Volume crop_or_pad(const Volume& v, int target) {
  if (target < 1) throw ShapeError("volume", "crop/pad target must be >= 1");
  Volume out(target, 0.0);
  // Source index = destination index + offset. Positive offset crops, negative pads.
  // floor division puts the odd voxel on the high-index side in both cases.
  const int diff = v.dim - target;
  const int offset = diff >= 0 ? diff / 2 : -((-diff) / 2);
  for (int i = 0; i < target; ++i) {
    const int si = i + offset;
    if (si < 0 || si >= v.dim) continue;
    for (int j = 0; j < target; ++j) {
      const int sj = j + offset;
      if (sj < 0 || sj >= v.dim) continue;
      for (int k = 0; k < target; ++k) {
        const int sk = k + offset;
        if (sk < 0 || sk >= v.dim) continue;
        out.at(i, j, k) = v.at(si, sj, sk);
      }
    }
  }
  return out;
}

Volume flip(const Volume& v, const std::array<bool, 3>& axes) {
  Volume out(v.dim);
  const int last = v.dim - 1;
  for (int i = 0; i < v.dim; ++i) {
    const int si = axes[0] ? last - i : i;
    for (int j = 0; j < v.dim; ++j) {
      const int sj = axes[1] ? last - j : j;
      for (int k = 0; k < v.dim; ++k) {
        out.at(i, j, k) = v.at(si, sj, axes[2] ? last - k : k);
      }
    }
  }
  return out;
}

}  // namespace trajret
