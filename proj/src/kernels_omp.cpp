#include <cmath>
#include <cstring>

#include "radapt/kernels.hpp"

// OpenMP twins of the serial kernels. Work is split across output rows (or
// batch entries), so every output element is produced by exactly one thread
// with the same summation order as the serial reference.

namespace radapt::kernels::omp {
namespace {

inline void row_nn(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[i * k + p];
    const double* brow = b + p * n;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

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

inline void row_tn(const double* a, const double* b, double* c, std::size_t i,
                   std::size_t k, std::size_t n, std::size_t lda) {
  double* crow = c + i * n;
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * lda + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
  }
}

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
  const long mm = static_cast<long>(m);
#pragma omp parallel for schedule(static)
  for (long i = 0; i < mm; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    if (!trans_a && !trans_b) row_nn(a, b, c, ii, k, n);
    else if (!trans_a && trans_b) row_nt(a, b, c, ii, k, n);
    else if (trans_a && !trans_b) row_tn(a, b, c, ii, k, n, m);
    else row_tt(a, b, c, ii, k, n, m);
  }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
  const long rr = static_cast<long>(rows);
#pragma omp parallel for schedule(static)
  for (long r = 0; r < rr; ++r) {
    double* row = x + static_cast<std::size_t>(r) * cols;
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
  const long bb = static_cast<long>(batch);
#pragma omp parallel for schedule(static)
  for (long bi = 0; bi < bb; ++bi) {
    const auto i = static_cast<std::size_t>(bi);
    serial::matmul(a + i * stride_a, b + i * stride_b, c + i * stride_c, m, k,
                   n, false, trans_b, false);
  }
}

}  // namespace radapt::kernels::omp
