#pragma once
// Row-major dense matrix kernels. All accumulate into `c` so autodiff closures
// can sum gradients in place; callers zero the destination when they want a
// plain product. Loops are single-threaded and keep a fixed summation order so
// repeated runs (and restricted-block recomputations) are bit-identical.

#include <cstddef>

namespace smt {

// c[n x d] += a[n x k] . b[k x d]
inline void gemm_nn_acc(const double* a, const double* b, double* c,
                        std::size_t n, std::size_t k, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = c + i * d;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * d;
      for (std::size_t j = 0; j < d; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[n x d] += a[n x k] . b[d x k]^T   (rows of b are dotted with rows of a)
inline void gemm_nt_acc(const double* a, const double* b, double* c,
                        std::size_t n, std::size_t k, std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      crow[j] += acc;
    }
  }
}

// c[p x q] += a[n x p]^T . b[n x q], accumulated row-by-row (t ascending).
// Partial-block gradient kernels follow the same t order, which keeps block
// sums bit-identical to slices of this full product.
inline void gemm_tn_acc(const double* a, const double* b, double* c,
                        std::size_t n, std::size_t p, std::size_t q) {
  for (std::size_t t = 0; t < n; ++t) {
    const double* arow = a + t * p;
    const double* brow = b + t * q;
    for (std::size_t i = 0; i < p; ++i) {
      const double av = arow[i];
      double* crow = c + i * q;
      for (std::size_t j = 0; j < q; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace smt
