// Throughput comparison: OpenMP/AVX2 kernels vs the serial reference.
// Prints GFLOP/s per shape plus the max elementwise deviation between the
// two paths.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "advst/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace {

using clk = std::chrono::steady_clock;

double seconds_since(clk::time_point t0) {
    return std::chrono::duration<double>(clk::now() - t0).count();
}

void fill(std::vector<float>& v, std::mt19937& g) {
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    for (auto& x : v) x = d(g);
}

struct Shape {
    std::size_t m, n, k;
    const char* note;
};

void bench_gemm(const Shape& s) {
    std::mt19937 g(7);
    std::vector<float> a(s.m * s.k), b(s.k * s.n), c(s.m * s.n), cref(s.m * s.n);
    fill(a, g);
    fill(b, g);

    const double flops = 2.0 * s.m * s.n * s.k;

    // Warm up, then time enough reps for ~0.5s.
    advst::kernels::gemm(false, false, s.m, s.n, s.k, a.data(), s.k, b.data(), s.n,
                         0.0f, c.data(), s.n);
    int reps = std::max(1, static_cast<int>(2e9 / flops));
    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r)
        advst::kernels::gemm(false, false, s.m, s.n, s.k, a.data(), s.k, b.data(), s.n,
                             0.0f, c.data(), s.n);
    const double fast = seconds_since(t0) / reps;

    auto t1 = clk::now();
    advst::kernels::ref::gemm(false, false, s.m, s.n, s.k, a.data(), s.k, b.data(), s.n,
                              0.0f, cref.data(), s.n);
    const double slow = seconds_since(t1);

    double maxdev = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i)
        maxdev = std::max(maxdev, static_cast<double>(std::fabs(c[i] - cref[i])));

    std::printf("gemm %5zu x %5zu x %5zu  [%-14s]  fast %7.2f GF/s  ref %6.2f GF/s  x%5.1f  maxdev %.2e\n",
                s.m, s.n, s.k, s.note, flops / fast / 1e9, flops / slow / 1e9, slow / fast,
                maxdev);
}

void bench_im2col() {
    const std::size_t c = 64, h = 32, w = 32, kh = 5, kw = 5;
    const std::size_t oh = h - kh + 1, ow = w - kw + 1;
    std::mt19937 g(9);
    std::vector<float> in(c * h * w), col(c * kh * kw * oh * ow), colref(col.size());
    fill(in, g);

    const int reps = 200;
    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r)
        advst::kernels::im2col(in.data(), c, h, w, kh, kw, col.data(), oh * ow);
    const double fast = seconds_since(t0) / reps;
    auto t1 = clk::now();
    for (int r = 0; r < reps; ++r)
        advst::kernels::ref::im2col(in.data(), c, h, w, kh, kw, colref.data(), oh * ow);
    const double slow = seconds_since(t1) / reps;

    double maxdev = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i)
        maxdev = std::max(maxdev, static_cast<double>(std::fabs(col[i] - colref[i])));
    const double gb = col.size() * sizeof(float) / 1e9;
    std::printf("im2col %zux%zux%zu k%zu           fast %7.2f GB/s  ref %6.2f GB/s  x%5.1f  maxdev %.2e\n",
                c, h, w, kh, gb / fast, gb / slow, slow / fast, maxdev);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (no OpenMP)\n");
#endif
    const Shape shapes[] = {
        {64, 25088, 75, "conv1 fwd"},    {128, 3200, 1600, "conv2 fwd"},
        {1600, 3200, 128, "conv2 dcol"}, {32, 1024, 3200, "fc1 fwd"},
        {1024, 1024, 1024, "square"},    {37, 511, 129, "ragged"},
    };
    for (const auto& s : shapes) bench_gemm(s);
    bench_im2col();
    return 0;
}
