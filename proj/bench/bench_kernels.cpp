// Timing comparison between the OpenMP kernels and the serial reference
// implementations they are tested against. Numbers are wall-clock medians.
#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dbr/common.hpp"
#include "dbr/kernels.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double median_seconds(const std::function<void()>& fn, int reps) {
    std::vector<double> times(reps);
    for (int r = 0; r < reps; ++r) {
        const auto t0 = Clock::now();
        fn();
        times[r] = std::chrono::duration<double>(Clock::now() - t0).count();
    }
    std::sort(times.begin(), times.end());
    return times[reps / 2];
}

void fill(dbr::Rng& rng, std::vector<double>& v) {
    for (double& x : v) x = rng.symmetric(1.0);
}

void bench_matmul(int n, int reps) {
    dbr::Rng rng(dbr::mix_seed(42, "bench"));
    std::vector<double> a(static_cast<size_t>(n) * n), b(a.size()), c(a.size());
    fill(rng, a);
    fill(rng, b);
    const double flops = 2.0 * n * n * static_cast<double>(n);
    const double ts = median_seconds(
        [&] { dbr::kernels::serial::matmul_nn(a.data(), b.data(), c.data(), n, n, n); }, reps);
    const double tp =
        median_seconds([&] { dbr::kernels::matmul_nn(a.data(), b.data(), c.data(), n, n, n); }, reps);
    std::printf("matmul %4dx%-4d  serial %8.3f ms (%6.2f GF/s)  parallel %8.3f ms (%6.2f GF/s)  speedup %.2fx\n",
                n, n, ts * 1e3, flops / ts * 1e-9, tp * 1e3, flops / tp * 1e-9, ts / tp);
}

void bench_softmax(int rows, int cols, int reps) {
    dbr::Rng rng(dbr::mix_seed(43, "bench"));
    std::vector<double> x(static_cast<size_t>(rows) * cols), y(x.size());
    fill(rng, x);
    const double ts = median_seconds(
        [&] { dbr::kernels::serial::softmax_rows(x.data(), y.data(), rows, cols); }, reps);
    const double tp =
        median_seconds([&] { dbr::kernels::softmax_rows(x.data(), y.data(), rows, cols); }, reps);
    std::printf("softmax %5dx%-4d serial %8.3f ms                 parallel %8.3f ms                 speedup %.2fx\n",
                rows, cols, ts * 1e3, tp * 1e3, ts / tp);
}

void bench_relu(int64_t n, int reps) {
    dbr::Rng rng(dbr::mix_seed(44, "bench"));
    std::vector<double> x(n), y(n);
    fill(rng, x);
    const double ts =
        median_seconds([&] { dbr::kernels::serial::relu(x.data(), y.data(), n); }, reps);
    const double tp = median_seconds([&] { dbr::kernels::relu(x.data(), y.data(), n); }, reps);
    std::printf("relu    %8lld   serial %8.3f ms                 parallel %8.3f ms                 speedup %.2fx\n",
                static_cast<long long>(n), ts * 1e3, tp * 1e3, ts / tp);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp: %d thread(s)\n", omp_get_max_threads());
#else
    std::printf("openmp: disabled at build time\n");
#endif
    for (int n : {64, 128, 256, 384}) bench_matmul(n, 5);
    for (int rows : {256, 4096}) bench_softmax(rows, 64, 5);
    for (int64_t n : {1 << 16, 1 << 20}) bench_relu(n, 5);
    return 0;
}
