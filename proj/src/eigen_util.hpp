#pragma once

// Eigen glue for the tensor kernels.
//
// Eigen peels vectorized loops according to the runtime alignment of its
// operands, and with FMA the peeled and vectorized paths round differently.
// Mapping arbitrary std::vector storage would therefore make results depend
// on heap addresses. Kernels copy operands into Eigen-owned (aligned)
// matrices and work on blocks of those, which keeps runs bit-identical.

#include <Eigen/Dense>
#include <algorithm>
#include <cstddef>
#include <span>

namespace hyperskel::detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Eigen::Index ix(std::size_t n) { return static_cast<Eigen::Index>(n); }

inline RowMat aligned_copy(const double* p, std::size_t rows, std::size_t cols) {
  return Eigen::Map<const RowMat>(p, ix(rows), ix(cols));
}

inline void copy_out(const RowMat& m, double* dst) {
  std::copy(m.data(), m.data() + m.size(), dst);
}

inline void add_into(const RowMat& m, std::span<double> dst) {
  const double* src = m.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace hyperskel::detail
