#pragma once

#include <array>
#include <optional>

#include "voxelfuse/geom/grid.hpp"

namespace voxelfuse::geom {

struct Projected {
  double u;
  double v;
  double depth;  // camera forward coordinate (third homogeneous component)
};

// 3×4 LiDAR-point -> homogeneous pixel projection (intrinsics, rectification
// and extrinsics already composed).
class Calibration {
 public:
  static constexpr double kMinDepth = 1e-6;

  Calibration();  // [I | 0]: focal 1, principal point 0, axes aligned
  explicit Calibration(const std::array<double, 12>& projection);

  // Pinhole with camera axes equal to LiDAR axes (z forward).
  static Calibration pinhole(double focal, double cx, double cy);

  const std::array<double, 12>& projection() const { return m_; }
  double operator()(int r, int c) const { return m_[static_cast<std::size_t>(r * 4 + c)]; }

  // nullopt when the point is behind the camera (depth <= kMinDepth).
  std::optional<Projected> project(const Vec3& p) const;
  // Inverse of project at a known depth. Throws NumericError if the left 3×3
  // block is singular.
  Vec3 unproject(double u, double v, double depth) const;

 private:
  std::array<double, 12> m_;
};

}  // namespace voxelfuse::geom
