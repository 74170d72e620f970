#include "voxelfuse/numgrad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "voxelfuse/error.hpp"
#include "voxelfuse/parallel.hpp"

namespace voxelfuse::ng {
namespace {

void require_matrix(const Value& x, const char* op) {
  if (x.data().rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " +
                     to_string(x.shape()));
  }
}

void require_same_shape(const Value& a, const Value& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + to_string(a.shape()) +
                     " and " + to_string(b.shape()) + " differ");
  }
}

// C[m×n] += A[m×k] · B[k×n]. Four rows of A share each pass over B.
void gemm_nn(const double* a, const double* b, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  parallel_for(m, [&](std::size_t r0, std::size_t r1) {
    std::size_t i = r0;
    for (; i + 4 <= r1; i += 4) {
      double* c0 = c + i * n;
      double* c1 = c0 + n;
      double* c2 = c1 + n;
      double* c3 = c2 + n;
      const double* a0 = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
        if (v0 == 0.0 && v1 == 0.0 && v2 == 0.0 && v3 == 0.0) continue;
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          const double bv = bp[j];
          c0[j] += v0 * bv;
          c1[j] += v1 * bv;
          c2[j] += v2 * bv;
          c3[j] += v3 * bv;
        }
      }
    }
    for (; i < r1; ++i) {
      double* ci = c + i * n;
      const double* ai = a + i * k;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  }, 16);
}

// C[m×k] += G[m×n] · B[k×n]^T. B is transposed once so the inner loop runs
// over contiguous columns of C.
void gemm_nt(const double* g, const double* b, double* c, std::size_t m,
             std::size_t n, std::size_t k) {
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  gemm_nn(g, bt.data(), c, m, n, k);
}

// C[k×n] += A[m×k]^T · G[m×n]. Four rows of A and G per pass over C.
void gemm_tn(const double* a, const double* g, double* c, std::size_t m,
             std::size_t k, std::size_t n) {
  parallel_for(k, [&](std::size_t p0, std::size_t p1) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      const double* a0 = a + i * k;
      const double* g0 = g + i * n;
      const double* g1 = g0 + n;
      const double* g2 = g1 + n;
      const double* g3 = g2 + n;
      for (std::size_t p = p0; p < p1; ++p) {
        const double v0 = a0[p], v1 = a0[k + p], v2 = a0[2 * k + p], v3 = a0[3 * k + p];
        if (v0 == 0.0 && v1 == 0.0 && v2 == 0.0 && v3 == 0.0) continue;
        double* cp = c + p * n;
        for (std::size_t j = 0; j < n; ++j) {
          cp[j] += v0 * g0[j] + v1 * g1[j] + v2 * g2[j] + v3 * g3[j];
        }
      }
    }
    for (; i < m; ++i) {
      const double* ai = a + i * k;
      const double* gi = g + i * n;
      for (std::size_t p = p0; p < p1; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        double* cp = c + p * n;
        for (std::size_t j = 0; j < n; ++j) cp[j] += av * gi[j];
      }
    }
  }, 16);
}

template <typename Fwd, typename Deriv>
Value elementwise(const Value& x, Fwd fwd, Deriv deriv) {
  Tensor out(x.shape());
  const auto in = x.data().values();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_result(std::move(out), {x}, [deriv](Node& self) {
    auto& xp = *self.parents[0];
    if (!xp.requires_grad) return;
    auto& gx = xp.ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      gx[i] += self.grad[i] * deriv(xp.data[i], self.data[i]);
    }
  });
}

}  // namespace

Value matmul(const Value& a, const Value& b) {
  if (a.data().rank() != 2 || b.data().rank() != 2 ||
      a.data().cols() != b.data().rows()) {
    throw ShapeError("matmul: dimension mismatch between " + to_string(a.shape()) +
                     " and " + to_string(b.shape()));
  }
  const std::size_t m = a.data().rows(), k = a.data().cols(), n = b.data().cols();
  Tensor out(Shape{m, n});
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  return make_result(std::move(out), {a, b}, [m, k, n](Node& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      gemm_nt(self.grad.data(), bn.data.data(), an.ensure_grad().data(), m, n, k);
    }
    if (bn.requires_grad) {
      gemm_tn(an.data.data(), self.grad.data(), bn.ensure_grad().data(), m, k, n);
    }
  });
}

Value transpose(const Value& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.data().rows(), n = a.data().cols();
  Tensor out(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  return make_result(std::move(out), {a}, [m, n](Node& self) {
    auto& an = *self.parents[0];
    auto& g = an.ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[j * m + i];
  });
}

Value add(const Value& a, const Value& b) {
  require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Value sub(const Value& a, const Value& b) {
  require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Value mul(const Value& a, const Value& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  return make_result(std::move(out), {a, b}, [](Node& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    if (an.requires_grad) {
      auto& g = an.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bn.data[i];
    }
    if (bn.requires_grad) {
      auto& g = bn.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * an.data[i];
    }
  });
}

Value scale(const Value& a, double s) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * s;
  return make_result(std::move(out), {a}, [s](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Value add_bias(const Value& x, const Value& b) {
  require_matrix(x, "add_bias");
  const std::size_t m = x.data().rows(), n = x.data().cols();
  if (b.data().rank() != 1 || b.data().size() != n) {
    throw ShapeError("add_bias: bias " + to_string(b.shape()) +
                     " does not match " + to_string(x.shape()));
  }
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x.data()[i * n + j] + b.data()[j];
  return make_result(std::move(out), {x, b}, [m, n](Node& self) {
    if (self.parents[0]->requires_grad) {
      auto& g = self.parents[0]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
    }
  });
}

Value relu(const Value& x) {
  return elementwise(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Value sin(const Value& x) {
  return elementwise(
      x, [](double v) { return std::sin(v); },
      [](double in, double) { return std::cos(in); });
}

Value softmax_rows(const Value& x) {
  require_matrix(x, "softmax_rows");
  const std::size_t m = x.data().rows(), n = x.data().cols();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = x.data().row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (double v : row) {
      if (std::isnan(v)) throw NumericError("softmax_rows: NaN in input row " + std::to_string(i));
      mx = std::max(mx, v);
    }
    double z = 0.0;
    auto orow = out.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::size_t j = 0; j < n; ++j) orow[j] /= z;
  }
  return make_result(std::move(out), {x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* gy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += y[j] * (gy[j] - dot);
    }
  });
}

Value outer(const Value& u, const Value& v) {
  if (u.data().rank() != 1 || v.data().rank() != 1) {
    throw ShapeError("outer: expected two vectors, got " + to_string(u.shape()) +
                     " and " + to_string(v.shape()));
  }
  const std::size_t c = u.size(), r = v.size();
  Tensor out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = v.data()[i] * u.data()[j];
  return make_result(std::move(out), {u, v}, [r, c](Node& self) {
    auto& un = *self.parents[0];
    auto& vn = *self.parents[1];
    if (un.requires_grad) {
      auto& g = un.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[j] += self.grad[i * c + j] * vn.data[i];
    }
    if (vn.requires_grad) {
      auto& g = vn.ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i] += self.grad[i * c + j] * un.data[j];
    }
  });
}

Value l2_normalize(const Value& x) {
  const auto rank = x.data().rank();
  if (rank != 1 && rank != 2) {
    throw ShapeError("l2_normalize: expected vector or matrix, got " + to_string(x.shape()));
  }
  const std::size_t m = rank == 1 ? 1 : x.data().rows();
  const std::size_t n = rank == 1 ? x.size() : x.data().cols();
  Tensor out(x.shape());
  std::vector<double> norms(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* xi = x.data().data() + i * n;
    double ss = 0.0;
    for (std::size_t j = 0; j < n; ++j) ss += xi[j] * xi[j];
    const double norm = std::sqrt(ss);
    if (!(norm > kNormEpsilon)) {
      throw NumericError("l2_normalize: degenerate vector (norm " + std::to_string(norm) +
                         ") at row " + std::to_string(i));
    }
    norms[i] = norm;
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xi[j] / norm;
  }
  return make_result(std::move(out), {x}, [m, n, norms = std::move(norms)](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i) {
      const double* y = self.data.data() + i * n;
      const double* gy = self.grad.data() + i * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += y[j] * gy[j];
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += (gy[j] - y[j] * dot) / norms[i];
    }
  });
}

Value sum(const Value& x) {
  Tensor out = Tensor::scalar(pairwise_sum(x.data().values()));
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double s = self.grad[0];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
  });
}

Value mean(const Value& x) {
  const std::size_t n = x.size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  Tensor out = Tensor::scalar(pairwise_sum(x.data().values()) / static_cast<double>(n));
  return make_result(std::move(out), {x}, [n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    const double s = self.grad[0] / static_cast<double>(n);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s;
  });
}

Value sum_rows(const Value& x) {
  require_matrix(x, "sum_rows");
  const std::size_t m = x.data().rows(), n = x.data().cols();
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) out[i] = pairwise_sum(x.data().row(i));
  return make_result(std::move(out), {x}, [m, n](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) g[i * n + j] += self.grad[i];
  });
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no inputs");
  const std::size_t m = parts[0].data().rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.data().rows() != m) {
      throw ShapeError("concat_cols: row count mismatch " + to_string(parts[0].shape()) +
                       " vs " + to_string(p.shape()));
    }
    widths.push_back(p.data().cols());
    total += p.data().cols();
  }
  Tensor out(Shape{m, total});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(parts[k].data().data() + i * widths[k], widths[k],
                  out.data() + i * total + off);
    off += widths[k];
  }
  return make_result(std::move(out), parts, [m, total, widths](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      auto& pn = *self.parents[k];
      if (pn.requires_grad) {
        auto& g = pn.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j)
            g[i * widths[k] + j] += self.grad[i * total + off + j];
      }
      off += widths[k];
    }
  });
}

Value slice_cols(const Value& x, std::size_t begin, std::size_t end) {
  require_matrix(x, "slice_cols");
  const std::size_t m = x.data().rows(), n = x.data().cols();
  if (begin > end || end > n) {
    throw ShapeError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") out of range for " + to_string(x.shape()));
  }
  const std::size_t w = end - begin;
  Tensor out(Shape{m, w});
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().data() + i * n + begin, w, out.data() + i * w);
  return make_result(std::move(out), {x}, [m, n, w, begin](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * n + begin + j] += self.grad[i * w + j];
  });
}

Value reshape(const Value& x, Shape shape) {
  Tensor out = x.data().reshaped(std::move(shape));
  return make_result(std::move(out), {x}, [](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Value apply_rows(std::shared_ptr<const SparseRowMap> map, const Value& x) {
  require_matrix(x, "apply_rows");
  if (x.data().rows() != map->in_rows) {
    throw ShapeError("apply_rows: map expects " + std::to_string(map->in_rows) +
                     " input rows, got " + to_string(x.shape()));
  }
  const std::size_t c = x.data().cols();
  const std::size_t m = map->out_rows();
  Tensor out(Shape{m, c});
  const double* in = x.data().data();
  parallel_for(m, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t i = r0; i < r1; ++i) {
      double* o = out.data() + i * c;
      for (std::size_t k = map->offsets[i]; k < map->offsets[i + 1]; ++k) {
        const double w = map->weights[k];
        const double* src = in + map->cols[k] * c;
        for (std::size_t j = 0; j < c; ++j) o[j] += w * src[j];
      }
    }
  }, 256);
  return make_result(std::move(out), {x}, [map, c](Node& self) {
    auto& g = self.parents[0]->ensure_grad();
    // Scatter-add: serial so accumulation order is fixed.
    for (std::size_t i = 0; i < map->out_rows(); ++i) {
      const double* go = self.grad.data() + i * c;
      for (std::size_t k = map->offsets[i]; k < map->offsets[i + 1]; ++k) {
        const double w = map->weights[k];
        double* dst = g.data() + map->cols[k] * c;
        for (std::size_t j = 0; j < c; ++j) dst[j] += w * go[j];
      }
    }
  });
}

Value gather_rows(const Value& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  auto map = std::make_shared<SparseRowMap>();
  map->in_rows = x.data().rows();
  for (auto r : rows) {
    if (r >= map->in_rows) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       to_string(x.shape()));
    }
    map->push(r, 1.0);
    map->finish_row();
  }
  return apply_rows(std::move(map), x);
}

Value scatter_rows(const Value& x, std::span<const std::size_t> rows,
                   std::size_t total_rows) {
  require_matrix(x, "scatter_rows");
  if (rows.size() != x.data().rows()) {
    throw ShapeError("scatter_rows: " + std::to_string(rows.size()) + " targets for " +
                     to_string(x.shape()));
  }
  std::vector<std::ptrdiff_t> source(total_rows, -1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] >= total_rows) {
      throw IndexError("scatter_rows: target row " + std::to_string(rows[k]) +
                       " >= " + std::to_string(total_rows));
    }
    if (source[rows[k]] >= 0) {
      throw ContractError("scatter_rows: internal error, target row " +
                          std::to_string(rows[k]) + " written twice");
    }
    source[rows[k]] = static_cast<std::ptrdiff_t>(k);
  }
  auto map = std::make_shared<SparseRowMap>();
  map->in_rows = rows.size();
  map->offsets.reserve(total_rows + 1);
  for (std::size_t r = 0; r < total_rows; ++r) {
    if (source[r] >= 0) map->push(static_cast<std::size_t>(source[r]), 1.0);
    map->finish_row();
  }
  return apply_rows(std::move(map), x);
}

}  // namespace voxelfuse::ng
