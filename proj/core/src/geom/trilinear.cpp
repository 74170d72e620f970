#include "voxelfuse/geom/trilinear.hpp"

#include <cmath>

#include "voxelfuse/error.hpp"

namespace voxelfuse::geom {

std::optional<TrilinearStencil> trilinear_stencil(const Vec3& coord, const Index3& dims) {
  for (int a = 0; a < 3; ++a) {
    if (std::isnan(coord[a])) throw NumericError("trilinear_stencil: NaN coordinate");
    if (coord[a] < -0.5 || coord[a] > static_cast<double>(dims[a]) - 0.5) return std::nullopt;
  }
  long base[3];
  double frac[3];
  for (int a = 0; a < 3; ++a) {
    const double f = std::floor(coord[a]);
    base[a] = static_cast<long>(f);
    frac[a] = coord[a] - f;
  }
  TrilinearStencil s;
  for (int k = 0; k < 8; ++k) {
    long idx[3];
    double w = 1.0;
    bool inside = true;
    for (int a = 0; a < 3; ++a) {
      const int bit = (k >> (2 - a)) & 1;
      idx[a] = base[a] + bit;
      w *= bit ? frac[a] : 1.0 - frac[a];
      inside = inside && idx[a] >= 0 && idx[a] < static_cast<long>(dims[a]);
    }
    s.weight[k] = w;
    s.inside[k] = inside;
    if (inside) {
      s.flat[k] = (static_cast<std::size_t>(idx[0]) * dims[1] + static_cast<std::size_t>(idx[1])) *
                      dims[2] +
                  static_cast<std::size_t>(idx[2]);
    }
  }
  return s;
}

std::vector<double> trilinear_sample(const LatticeView& lattice, const Vec3& coord) {
  std::vector<double> out(lattice.channels, 0.0);
  const auto s = trilinear_stencil(coord, lattice.dims);
  if (!s) return out;
  for (int k = 0; k < 8; ++k) {
    if (!s->inside[k] || s->weight[k] == 0.0) continue;
    const double* node = lattice.data.data() + s->flat[k] * lattice.channels;
    for (std::size_t c = 0; c < lattice.channels; ++c) out[c] += s->weight[k] * node[c];
  }
  return out;
}

}  // namespace voxelfuse::geom
