#include "voxelfuse/geom/calibration.hpp"

#include <cmath>
#include <utility>

#include "voxelfuse/error.hpp"

namespace voxelfuse::geom {

Calibration::Calibration() : m_{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0} {}

Calibration::Calibration(const std::array<double, 12>& projection) : m_(projection) {
  for (double v : m_) {
    if (!std::isfinite(v)) throw NumericError("Calibration: non-finite projection entry");
  }
}

Calibration Calibration::pinhole(double focal, double cx, double cy) {
  return Calibration({focal, 0, cx, 0, 0, focal, cy, 0, 0, 0, 1, 0});
}

std::optional<Projected> Calibration::project(const Vec3& p) const {
  const double h0 = m_[0] * p[0] + m_[1] * p[1] + m_[2] * p[2] + m_[3];
  const double h1 = m_[4] * p[0] + m_[5] * p[1] + m_[6] * p[2] + m_[7];
  const double h2 = m_[8] * p[0] + m_[9] * p[1] + m_[10] * p[2] + m_[11];
  if (!(h2 > kMinDepth)) return std::nullopt;
  return Projected{h0 / h2, h1 / h2, h2};
}

Vec3 Calibration::unproject(double u, double v, double depth) const {
  // Solve A p = depth * (u, v, 1) - b with partial pivoting.
  double a[3][4];
  const double rhs[3] = {u * depth, v * depth, depth};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a[r][c] = (*this)(r, c);
    a[r][3] = rhs[r] - (*this)(r, 3);
  }
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-15) throw NumericError("Calibration: singular projection");
    if (piv != col) std::swap(a[piv], a[col]);
    for (int r = 0; r < 3; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 4; ++c) a[r][c] -= f * a[col][c];
    }
  }
  return {a[0][3] / a[0][0], a[1][3] / a[1][1], a[2][3] / a[2][2]};
}

}  // namespace voxelfuse::geom
