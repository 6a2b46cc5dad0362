#include "gemm.hpp"

#include <Eigen/Core>

namespace discrim::detail {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const Matrix>;
using Map = Eigen::Map<Matrix>;

template <typename A, typename B>
void assign(Map& c, const A& a, const B& b, bool accumulate) {
  if (accumulate) {
    c.noalias() += a * b;
  } else {
    c.noalias() = a * b;
  }
}

}  // namespace

void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto N = static_cast<Eigen::Index>(n);
  const auto K = static_cast<Eigen::Index>(k);
  Map cm(c, M, N);
  if (k == 0) {
    if (!accumulate) cm.setZero();
    return;
  }
  // Stored shapes: A is [m x k] or [k x m]; B is [k x n] or [n x k].
  ConstMap am(a, transpose_a ? K : M, transpose_a ? M : K);
  ConstMap bm(b, transpose_b ? N : K, transpose_b ? K : N);
  if (!transpose_a && !transpose_b) assign(cm, am, bm, accumulate);
  if (!transpose_a && transpose_b) assign(cm, am, bm.transpose(), accumulate);
  if (transpose_a && !transpose_b) assign(cm, am.transpose(), bm, accumulate);
  if (transpose_a && transpose_b) assign(cm, am.transpose(), bm.transpose(), accumulate);
}

}  // namespace discrim::detail
