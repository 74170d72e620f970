#pragma once

#include <array>
#include <vector>

#include "voxelfuse/geom/grid.hpp"

namespace voxelfuse::geom {

// Wraps an angle into (-pi, pi].
double normalize_yaw(double yaw);

struct Point2 {
  double x;
  double y;
};

// Oriented box: size = (length along heading, width, height); yaw about +z.
class Box3D {
 public:
  Box3D() = default;
  // Throws SpecError unless every size component is positive and finite.
  Box3D(const Vec3& center, const Vec3& size, double yaw);

  const Vec3& center() const { return center_; }
  const Vec3& size() const { return size_; }
  double yaw() const { return yaw_; }
  double volume() const { return size_[0] * size_[1] * size_[2]; }
  double z_min() const { return center_[2] - 0.5 * size_[2]; }
  double z_max() const { return center_[2] + 0.5 * size_[2]; }

  // Footprint corners, counter-clockwise.
  std::array<Point2, 4> bev_corners() const;
  std::array<Vec3, 8> corners() const;
  // Box-frame coordinates of a world point (x along heading).
  Vec3 to_local(const Vec3& p) const;
  Vec3 to_world(const Vec3& local) const;
  bool contains(const Vec3& p) const;

  bool operator==(const Box3D&) const = default;

 private:
  Vec3 center_{0, 0, 0};
  Vec3 size_{1, 1, 1};
  double yaw_ = 0.0;
};

// A box with a detector confidence.
struct ScoredBox {
  Box3D box;
  double score = 0.0;

  bool operator==(const ScoredBox&) const = default;
};

// Area of the intersection of two convex polygons (vertices counter-clockwise).
double convex_intersection_area(const std::vector<Point2>& a, const std::vector<Point2>& b);

// Rotated footprint IoU.
double iou_bev(const Box3D& a, const Box3D& b);
// Rotated footprint overlap × vertical overlap over union volume.
double iou_3d(const Box3D& a, const Box3D& b);
// IoU of the axis-aligned rectangles enclosing each footprint.
double iou_bev_axis_aligned(const Box3D& a, const Box3D& b);

}  // namespace voxelfuse::geom
