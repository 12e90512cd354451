#pragma once

#include <Eigen/Core>
#include <array>
#include <cstddef>

namespace trajret {

/// Cubic scalar volume, voxels stored flat with index (i*d + j)*d + k.
struct Volume {
  int dim = 0;
  Eigen::VectorXd voxels;

  Volume() = default;
  explicit Volume(int d, double fill = 0.0);
  Volume(int d, Eigen::VectorXd values);

  Eigen::Index index(int i, int j, int k) const {
    return (static_cast<Eigen::Index>(i) * dim + j) * dim + k;
  }
  double& at(int i, int j, int k) { return voxels[index(i, j, k)]; }
  double at(int i, int j, int k) const { return voxels[index(i, j, k)]; }
  Eigen::Index size() const { return voxels.size(); }

  bool operator==(const Volume& other) const {
    return dim == other.dim && voxels.size() == other.voxels.size() &&
           (voxels.array() == other.voxels.array()).all();
  }
};

/// Throws ShapeError unless dims are cubic, at least 4, and all voxels finite.
void validate(const Volume& v);

/// Z-score every voxel using the mean and population standard deviation of
/// the voxels strictly above the global mean.
Volume zscore_normalize(const Volume& v);

/// Center-crop or symmetrically zero-pad to target^3. Odd margins put the
/// extra voxel on the high-index side.
Volume crop_or_pad(const Volume& v, int target);

/// Mirror along the given axes (0 = i, 1 = j, 2 = k).
Volume flip(const Volume& v, const std::array<bool, 3>& axes);

}  // namespace trajret
