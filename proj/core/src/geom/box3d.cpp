#include "voxelfuse/geom/box3d.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "voxelfuse/error.hpp"

namespace voxelfuse::geom {
namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double polygon_area(const std::vector<Point2>& poly) {
  double s = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % poly.size()];
    s += p.x * q.y - q.x * p.y;
  }
  return 0.5 * std::abs(s);
}

Point2 segment_line_hit(const Point2& p, const Point2& q, const Point2& a, const Point2& b) {
  const double cp = cross(a, b, p);
  const double cq = cross(a, b, q);
  const double t = cp / (cp - cq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

}  // namespace

double normalize_yaw(double yaw) {
  constexpr double kPi = std::numbers::pi;
  double y = std::remainder(yaw, 2.0 * kPi);
  if (y <= -kPi) y += 2.0 * kPi;
  return y;
}

Box3D::Box3D(const Vec3& center, const Vec3& size, double yaw)
    : center_(center), size_(size), yaw_(normalize_yaw(yaw)) {
  for (double s : size_) {
    if (!(s > 0.0) || !std::isfinite(s)) throw SpecError("Box3D: size must be positive");
  }
}

std::array<Point2, 4> Box3D::bev_corners() const {
  const double c = std::cos(yaw_), s = std::sin(yaw_);
  const double hl = 0.5 * size_[0], hw = 0.5 * size_[1];
  const double lx[4] = {hl, -hl, -hl, hl};
  const double ly[4] = {hw, hw, -hw, -hw};
  std::array<Point2, 4> out{};
  // (hl,hw) -> (-hl,hw) -> (-hl,-hw) -> (hl,-hw) is counter-clockwise.
  for (int i = 0; i < 4; ++i) {
    out[i] = {center_[0] + c * lx[i] - s * ly[i], center_[1] + s * lx[i] + c * ly[i]};
  }
  return out;
}

std::array<Vec3, 8> Box3D::corners() const {
  const auto bev = bev_corners();
  std::array<Vec3, 8> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {bev[i].x, bev[i].y, z_min()};
    out[i + 4] = {bev[i].x, bev[i].y, z_max()};
  }
  return out;
}

Vec3 Box3D::to_local(const Vec3& p) const {
  const double c = std::cos(yaw_), s = std::sin(yaw_);
  const double dx = p[0] - center_[0], dy = p[1] - center_[1];
  return {c * dx + s * dy, -s * dx + c * dy, p[2] - center_[2]};
}

Vec3 Box3D::to_world(const Vec3& l) const {
  const double c = std::cos(yaw_), s = std::sin(yaw_);
  return {center_[0] + c * l[0] - s * l[1], center_[1] + s * l[0] + c * l[1],
          center_[2] + l[2]};
}

bool Box3D::contains(const Vec3& p) const {
  const auto l = to_local(p);
  return std::abs(l[0]) <= 0.5 * size_[0] && std::abs(l[1]) <= 0.5 * size_[1] &&
         std::abs(l[2]) <= 0.5 * size_[2];
}

double convex_intersection_area(const std::vector<Point2>& a, const std::vector<Point2>& b) {
  // Sutherland-Hodgman: clip `a` by every edge of `b`.
  std::vector<Point2> poly = a;
  for (std::size_t e = 0; e < b.size() && !poly.empty(); ++e) {
    const Point2& ea = b[e];
    const Point2& eb = b[(e + 1) % b.size()];
    std::vector<Point2> next;
    next.reserve(poly.size() + 2);
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point2& p = poly[i];
      const Point2& q = poly[(i + 1) % poly.size()];
      const bool p_in = cross(ea, eb, p) >= 0.0;
      const bool q_in = cross(ea, eb, q) >= 0.0;
      if (p_in) next.push_back(p);
      if (p_in != q_in) next.push_back(segment_line_hit(p, q, ea, eb));
    }
    poly = std::move(next);
  }
  return poly.size() < 3 ? 0.0 : polygon_area(poly);
}

double iou_bev(const Box3D& a, const Box3D& b) {
  const auto ca = a.bev_corners();
  const auto cb = b.bev_corners();
  const double inter = convex_intersection_area({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  const double area_a = a.size()[0] * a.size()[1];
  const double area_b = b.size()[0] * b.size()[1];
  const double uni = area_a + area_b - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double dz = std::min(a.z_max(), b.z_max()) - std::max(a.z_min(), b.z_min());
  if (dz <= 0.0) return 0.0;
  const auto ca = a.bev_corners();
  const auto cb = b.bev_corners();
  const double inter_area =
      convex_intersection_area({ca.begin(), ca.end()}, {cb.begin(), cb.end()});
  const double inter = inter_area * dz;
  const double uni = a.volume() + b.volume() - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

double iou_bev_axis_aligned(const Box3D& a, const Box3D& b) {
  auto bounds = [](const Box3D& box) {
    const auto c = box.bev_corners();
    std::array<double, 4> r{c[0].x, c[0].y, c[0].x, c[0].y};
    for (const auto& p : c) {
      r[0] = std::min(r[0], p.x);
      r[1] = std::min(r[1], p.y);
      r[2] = std::max(r[2], p.x);
      r[3] = std::max(r[3], p.y);
    }
    return r;
  };
  const auto ra = bounds(a), rb = bounds(b);
  const double ix = std::min(ra[2], rb[2]) - std::max(ra[0], rb[0]);
  const double iy = std::min(ra[3], rb[3]) - std::max(ra[1], rb[1]);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double area_a = (ra[2] - ra[0]) * (ra[3] - ra[1]);
  const double area_b = (rb[2] - rb[0]) * (rb[3] - rb[1]);
  return inter / (area_a + area_b - inter);
}

}  // namespace voxelfuse::geom
