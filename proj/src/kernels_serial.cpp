#include <cmath>
#include <cstring>

#include "radapt/kernels.hpp"

namespace radapt::kernels::serial {
namespace {

// NN: C[i,j] += A[i,k] B[k,j]; i-k-j order so the inner loop streams C and B.
inline void row_nn(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[i * k + p];
    const double* brow = b + p * n;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// NT: C[i,j] += A[i,p] B[j,p]; contiguous dot products.
inline void row_nt(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n) {
  const double* arow = a + i * k;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
    c[i * n + j] += acc;
  }
}

// TN: C[i,j] += A[p,i] B[p,j].
inline void row_tn(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n, std::size_t lda) {
  double* crow = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * lda + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

// TT: C[i,j] += A[p,i] B[j,p].
inline void row_tt(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n, std::size_t lda) {
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a[p * lda + i] * b[j * k + p];
    c[i * n + j] += acc;
  }
}

}  // namespace

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate) {
  if (!accumulate) std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    if (!trans_a && !trans_b) row_nn(a, b, c, i, k, n);
    else if (!trans_a && trans_b) row_nt(a, b, c, i, k, n);
    else if (trans_a && !trans_b) row_tn(a, b, c, i, k, n, m);
    else row_tt(a, b, c, i, k, n, m);
  }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = x + r * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
  }
}

void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k,
                    std::size_t n, std::size_t stride_a, std::size_t stride_b,
                    std::size_t stride_c, bool trans_b) {
  for (std::size_t bi = 0; bi < batch; ++bi) {
    matmul(a + bi * stride_a, b + bi * stride_b, c + bi * stride_c, m, k, n,
           false, trans_b, false);
  }
}

}  // namespace radapt::kernels::serial
