#pragma once

#include <cstddef>

namespace discrim::detail {

// Row-major C[m x n] (+)= op(A) * op(B), where op(A) is [m x k] and op(B) is [k x n].
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate);

}  // namespace discrim::detail
