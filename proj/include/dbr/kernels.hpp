#pragma once

#include <cstdint>

// Dense numeric kernels. Each kernel exists twice: an OpenMP-parallel version
// in dbr::kernels (loops over independent output elements, so results are
// bit-identical for any thread count) and a plain serial reference in
// dbr::kernels::serial used by tests and the benchmark.

namespace dbr::kernels {

// C(m,n) = A(m,k) * B(k,n); accumulates into C when acc is true.
void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false);
// C(m,n) = A(m,k) * B(n,k)^T
void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false);
// C(m,n) = A(k,m)^T * B(k,n)
void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false);

void relu(const double* x, double* y, int64_t n);
// dx += dy where x > 0 (subgradient at 0 is 0)
void relu_backward(const double* x, const double* dy, double* dx, int64_t n);

// Row-wise softmax with max subtraction.
void softmax_rows(const double* x, double* y, int rows, int cols);
// dx += J_softmax^T dy given y = softmax(x), row-wise.
void softmax_rows_backward(const double* y, const double* dy, double* dx, int rows, int cols);

void add(const double* a, const double* b, double* c, int64_t n);
void sub(const double* a, const double* b, double* c, int64_t n);
void mul(const double* a, const double* b, double* c, int64_t n);
// y += alpha * x
void axpy(double alpha, const double* x, double* y, int64_t n);

namespace serial {
void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false);
void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false);
void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc = false);
void relu(const double* x, double* y, int64_t n);
void relu_backward(const double* x, const double* dy, double* dx, int64_t n);
void softmax_rows(const double* x, double* y, int rows, int cols);
void softmax_rows_backward(const double* y, const double* dy, double* dx, int rows, int cols);
void add(const double* a, const double* b, double* c, int64_t n);
void sub(const double* a, const double* b, double* c, int64_t n);
void mul(const double* a, const double* b, double* c, int64_t n);
void axpy(double alpha, const double* x, double* y, int64_t n);
}  // namespace serial

}  // namespace dbr::kernels
