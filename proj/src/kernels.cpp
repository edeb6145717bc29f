#include "dbr/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

// Work thresholds below which the OpenMP versions run inline; per-example
// matrices at desk scale are often too small to be worth a parallel region.
namespace {
constexpr int64_t kParLimit = 1 << 14;
}

namespace dbr::kernels {

namespace serial {

void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * n;
        if (!acc) std::memset(crow, 0, sizeof(double) * n);
        const double* arow = A + static_cast<int64_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double a = arow[l];
            const double* brow = B + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<int64_t>(i) * k;
        double* crow = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = B + static_cast<int64_t>(j) * k;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
            crow[j] = acc ? crow[j] + s : s;
        }
    }
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * n;
        if (!acc) std::memset(crow, 0, sizeof(double) * n);
        for (int l = 0; l < k; ++l) {
            const double a = A[static_cast<int64_t>(l) * m + i];
            const double* brow = B + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void relu(const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, int64_t n) {
    for (int64_t i = 0; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* xr = x + static_cast<int64_t>(r) * cols;
        double* yr = y + static_cast<int64_t>(r) * cols;
        double mx = xr[0];
        for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (int j = 0; j < cols; ++j) yr[j] /= sum;
    }
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, int rows, int cols) {
    for (int r = 0; r < rows; ++r) {
        const double* yr = y + static_cast<int64_t>(r) * cols;
        const double* dyr = dy + static_cast<int64_t>(r) * cols;
        double* dxr = dx + static_cast<int64_t>(r) * cols;
        double dot = 0.0;
        for (int j = 0; j < cols; ++j) dot += dyr[j] * yr[j];
        for (int j = 0; j < cols; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
    }
}

void add(const double* a, const double* b, double* c, int64_t n) {
    for (int64_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}
void sub(const double* a, const double* b, double* c, int64_t n) {
    for (int64_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}
void mul(const double* a, const double* b, double* c, int64_t n) {
    for (int64_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}
void axpy(double alpha, const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace serial

void matmul_nn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * k * n > kParLimit)
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * n;
        if (!acc) std::memset(crow, 0, sizeof(double) * n);
        const double* arow = A + static_cast<int64_t>(i) * k;
        for (int l = 0; l < k; ++l) {
            const double a = arow[l];
            const double* brow = B + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void matmul_nt(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * k * n > kParLimit)
    for (int i = 0; i < m; ++i) {
        const double* arow = A + static_cast<int64_t>(i) * k;
        double* crow = C + static_cast<int64_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = B + static_cast<int64_t>(j) * k;
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
            crow[j] = acc ? crow[j] + s : s;
        }
    }
}

void matmul_tn(const double* A, const double* B, double* C, int m, int k, int n, bool acc) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(m) * k * n > kParLimit)
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<int64_t>(i) * n;
        if (!acc) std::memset(crow, 0, sizeof(double) * n);
        for (int l = 0; l < k; ++l) {
            const double a = A[static_cast<int64_t>(l) * m + i];
            const double* brow = B + static_cast<int64_t>(l) * n;
            for (int j = 0; j < n; ++j) crow[j] += a * brow[j];
        }
    }
}

void relu(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParLimit)
    for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParLimit)
    for (int64_t i = 0; i < n; ++i)
        if (x[i] > 0.0) dx[i] += dy[i];
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(rows) * cols > kParLimit)
    for (int r = 0; r < rows; ++r)
        serial::softmax_rows(x + static_cast<int64_t>(r) * cols, y + static_cast<int64_t>(r) * cols, 1, cols);
}

void softmax_rows_backward(const double* y, const double* dy, double* dx, int rows, int cols) {
#pragma omp parallel for schedule(static) if (static_cast<int64_t>(rows) * cols > kParLimit)
    for (int r = 0; r < rows; ++r) {
        const int64_t off = static_cast<int64_t>(r) * cols;
        serial::softmax_rows_backward(y + off, dy + off, dx + off, 1, cols);
    }
}

void add(const double* a, const double* b, double* c, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParLimit)
    for (int64_t i = 0; i < n; ++i) c[i] = a[i] + b[i];
}
void sub(const double* a, const double* b, double* c, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParLimit)
    for (int64_t i = 0; i < n; ++i) c[i] = a[i] - b[i];
}
void mul(const double* a, const double* b, double* c, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParLimit)
    for (int64_t i = 0; i < n; ++i) c[i] = a[i] * b[i];
}
void axpy(double alpha, const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static) if (n > kParLimit)
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace dbr::kernels
