/*
 * Copyright 2026 The GTV Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <vector>

#include "gtv/common.hpp"

namespace gtv {

/// Row-major dense f64 matrix: rows are batch entries, columns features.
struct Tensor2 {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor2() = default;
  Tensor2(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
};

using EigenRowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<EigenRowMat>;
using ConstMapMat = Eigen::Map<const EigenRowMat>;

inline MapMat as_eigen(Tensor2& t) {
  return MapMat(t.data.data(), static_cast<Eigen::Index>(t.rows),
                static_cast<Eigen::Index>(t.cols));
}
inline ConstMapMat as_eigen(const Tensor2& t) {
  return ConstMapMat(t.data.data(), static_cast<Eigen::Index>(t.rows),
                     static_cast<Eigen::Index>(t.cols));
}

// Raw-buffer views for parameter slices.
inline MapMat map_mat(double* p, std::size_t r, std::size_t c) {
  return MapMat(p, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
inline ConstMapMat map_mat(const double* p, std::size_t r, std::size_t c) {
  return ConstMapMat(p, static_cast<Eigen::Index>(r),
                     static_cast<Eigen::Index>(c));
}

/// out = a * b, where a is (n×k) and b is (k×m).
inline Tensor2 matmul(const Tensor2& a, const Tensor2& b) {
  require<ShapeError>(a.cols == b.rows, "matmul shape mismatch: ", a.rows, "x",
                      a.cols, " * ", b.rows, "x", b.cols);
  Tensor2 out(a.rows, b.cols);
  as_eigen(out).noalias() = as_eigen(a) * as_eigen(b);
  return out;
}

inline Tensor2 hconcat(const std::vector<const Tensor2*>& parts) {
  require<ShapeError>(!parts.empty(), "hconcat of zero pieces");
  std::size_t rows = parts[0]->rows, cols = 0;
  for (const Tensor2* p : parts) {
    require<ShapeError>(p->rows == rows, "hconcat batch mismatch");
    cols += p->cols;
  }
  Tensor2 out(rows, cols);
  std::size_t off = 0;
  for (const Tensor2* p : parts) {
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(p->data.begin() + r * p->cols,
                p->data.begin() + (r + 1) * p->cols,
                out.data.begin() + r * cols + off);
    off += p->cols;
  }
  return out;
}

inline Tensor2 col_slice(const Tensor2& t, std::size_t begin, std::size_t n) {
  require<ShapeError>(begin + n <= t.cols, "column slice out of range");
  Tensor2 out(t.rows, n);
  for (std::size_t r = 0; r < t.rows; ++r)
    std::copy(t.data.begin() + r * t.cols + begin,
              t.data.begin() + r * t.cols + begin + n,
              out.data.begin() + r * n);
  return out;
}

template <class Index>
Tensor2 row_gather(const Tensor2& t, const std::vector<Index>& idx) {
  Tensor2 out(idx.size(), t.cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto r = static_cast<std::size_t>(idx[k]);
    require<ShapeError>(r < t.rows, "row index ", r, " out of range");
    std::copy(t.data.begin() + r * t.cols, t.data.begin() + (r + 1) * t.cols,
              out.data.begin() + k * t.cols);
  }
  return out;
}

/// Scatters `rows` (one per idx entry) into an n_rows × cols zero matrix.
template <class Index>
Tensor2 row_scatter(const Tensor2& rows, const std::vector<Index>& idx,
                    std::size_t n_rows) {
  require<ShapeError>(rows.rows == idx.size(), "row_scatter count mismatch");
  Tensor2 out(n_rows, rows.cols);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    auto r = static_cast<std::size_t>(idx[k]);
    for (std::size_t c = 0; c < rows.cols; ++c)
      out.at(r, c) += rows.at(k, c);
  }
  return out;
}

inline bool all_finite(const Tensor2& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace gtv
