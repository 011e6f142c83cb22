#include "radapt/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace radapt::kernels {

Backend& backend() {
#ifdef _OPENMP
  static Backend b = Backend::kOpenMP;
#else
  static Backend b = Backend::kSerial;
#endif
  return b;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate) {
  if (backend() == Backend::kOpenMP) {
    omp::matmul(a, b, c, m, k, n, trans_a, trans_b, accumulate);
  } else {
    serial::matmul(a, b, c, m, k, n, trans_a, trans_b, accumulate);
  }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
  if (backend() == Backend::kOpenMP) {
    omp::softmax_rows(x, rows, cols);
  } else {
    serial::softmax_rows(x, rows, cols);
  }
}

void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k,
                    std::size_t n, std::size_t stride_a, std::size_t stride_b,
                    std::size_t stride_c, bool trans_b) {
  if (backend() == Backend::kOpenMP) {
    omp::batched_matmul(a, b, c, batch, m, k, n, stride_a, stride_b, stride_c, trans_b);
  } else {
    serial::batched_matmul(a, b, c, batch, m, k, n, stride_a, stride_b, stride_c, trans_b);
  }
}

}  // namespace radapt::kernels
