#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "voxelfuse/numgrad/value.hpp"

namespace voxelfuse::ng {

// All ops take explicit shapes; the only broadcast is add_bias.

Value matmul(const Value& a, const Value& b);
Value transpose(const Value& a);

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
// x[m×n] + b[n] on every row.
Value add_bias(const Value& x, const Value& b);

Value relu(const Value& x);
Value sin(const Value& x);

// Row-wise softmax with max subtraction. NaN anywhere -> NumericError.
Value softmax_rows(const Value& x);

// result[i][j] = v[i] * u[j]; shape [len(v) × len(u)].
Value outer(const Value& u, const Value& v);

// Rank 1: x / ||x||. Rank 2: each row normalized. Norm <= 1e-12 throws.
Value l2_normalize(const Value& x);
inline constexpr double kNormEpsilon = 1e-12;

Value sum(const Value& x);
Value mean(const Value& x);
// [m×n] -> [m]
Value sum_rows(const Value& x);

Value concat_cols(const std::vector<Value>& parts);
Value slice_cols(const Value& x, std::size_t begin, std::size_t end);
Value reshape(const Value& x, Shape shape);

// Sparse linear map between row spaces, CSR layout:
//   out.row(i) = sum_{k in [offsets[i], offsets[i+1])} weights[k] * in.row(cols[k]).
// Backs gathers, scatters, trilinear resampling and RoI pooling.
struct SparseRowMap {
  std::size_t in_rows = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::size_t> cols;
  std::vector<double> weights;

  std::size_t out_rows() const { return offsets.size() - 1; }
  void push(std::size_t col, double w) {
    cols.push_back(col);
    weights.push_back(w);
  }
  void finish_row() { offsets.push_back(cols.size()); }
  std::size_t row_size(std::size_t i) const { return offsets[i + 1] - offsets[i]; }
};

Value apply_rows(std::shared_ptr<const SparseRowMap> map, const Value& x);
Value gather_rows(const Value& x, std::span<const std::size_t> rows);
// out has `total_rows` rows; out.row(rows[k]) = x.row(k), all others zero.
Value scatter_rows(const Value& x, std::span<const std::size_t> rows,
                   std::size_t total_rows);

}  // namespace voxelfuse::ng
