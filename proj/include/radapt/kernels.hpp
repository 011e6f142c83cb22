#pragma once

#include <cstddef>

namespace radapt::kernels {

/// Which implementation the dispatcher routes to. The serial path is the
/// reference the OpenMP path is tested against; both produce bit-identical
/// results because each output element keeps the same summation order.
enum class Backend { kSerial, kOpenMP };

Backend& backend();
int max_threads();
void set_threads(int n);

/// C[M,N] = (accumulate ? C : 0) + op(A) * op(B)
/// op transposes when the corresponding flag is set; A is M x K after op,
/// B is K x N after op. All matrices row-major, densely packed.
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate);

/// In-place softmax over each row of a [rows x cols] matrix.
void softmax_rows(double* x, std::size_t rows, std::size_t cols);

/// Batched C_i = A_i * op(B_i) over `batch` independent problems laid out at
/// the given strides. Used for attention where the per-head matrices are
/// small but numerous.
void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k,
                    std::size_t n, std::size_t stride_a, std::size_t stride_b,
                    std::size_t stride_c, bool trans_b);

namespace serial {
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate);
void softmax_rows(double* x, std::size_t rows, std::size_t cols);
void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k,
                    std::size_t n, std::size_t stride_a, std::size_t stride_b,
                    std::size_t stride_c, bool trans_b);
}  // namespace serial

namespace omp {
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n, bool trans_a, bool trans_b,
            bool accumulate);
void softmax_rows(double* x, std::size_t rows, std::size_t cols);
void batched_matmul(const double* a, const double* b, double* c,
                    std::size_t batch, std::size_t m, std::size_t k,
                    std::size_t n, std::size_t stride_a, std::size_t stride_b,
                    std::size_t stride_c, bool trans_b);
}  // namespace omp

}  // namespace radapt::kernels
