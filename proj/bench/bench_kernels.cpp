// Times each OpenMP kernel against its serial twin on sizes past the
// parallel grain and checks the outputs match bit for bit.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "ammu/kernels.hpp"
#include "ammu/rng.hpp"
#include "ammu/tensor.hpp"

using namespace ammu;

namespace {

struct Row {
    std::string op;
    std::string size;
    std::int64_t serial_ns = 0;
    std::int64_t parallel_ns = 0;
    bool identical = false;
};

template <typename F>
std::int64_t best_ns(F&& fn, int reps) {
    std::int64_t best = -1;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
        if (best < 0 || ns < best) best = ns;
    }
    return best;
}

template <typename T>
bool same_bits(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) return false;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        if (a.data()[i] != b.data()[i]) return false;
    }
    return true;
}

Row time_pair(const std::string& op, const std::string& size, int reps,
              const std::function<Tensor<double>()>& serial_fn,
              const std::function<Tensor<double>()>& parallel_fn) {
    Row row{op, size, 0, 0, false};
    const Tensor<double> ref = serial_fn();
    const Tensor<double> par = parallel_fn();
    row.identical = same_bits(ref, par);
    row.serial_ns = best_ns([&] { (void)serial_fn(); }, reps);
    row.parallel_ns = best_ns([&] { (void)parallel_fn(); }, reps);
    return row;
}

}  // namespace

int main(int argc, char** argv) {
    const int reps = argc > 1 ? std::atoi(argv[1]) : 5;
    if (reps < 1) {
        std::fprintf(stderr, "usage: bench_kernels [reps >= 1]\n");
        return 2;
    }
#ifdef _OPENMP
    std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
#else
    std::printf("threads: 1 (no OpenMP), reps: %d\n", reps);
#endif

    Rng rng(17);
    std::vector<Row> rows;

    {
        const Tensor<double> a = random_uniform<double>(Shape{192, 192}, rng, -1.0, 1.0);
        const Tensor<double> b = random_uniform<double>(Shape{192, 192}, rng, -1.0, 1.0);
        rows.push_back(time_pair("matmul", "192x192x192", reps,
                                 [&] { return serial::matmul(a, b); },
                                 [&] { return matmul(a, b); }));
        rows.push_back(time_pair("matmul_nt", "192x192x192", reps,
                                 [&] { return serial::matmul_nt(a, b); },
                                 [&] { return matmul_nt(a, b); }));
        rows.push_back(time_pair("matmul_tn", "192x192x192", reps,
                                 [&] { return serial::matmul_tn(a, b); },
                                 [&] { return matmul_tn(a, b); }));
    }

    {
        const Tensor<double> a = random_uniform<double>(Shape{64, 48, 48}, rng, -1.0, 1.0);
        const Tensor<double> b = random_uniform<double>(Shape{64, 48, 48}, rng, -1.0, 1.0);
        rows.push_back(time_pair("bmm", "64x48x48x48", reps,
                                 [&] { return serial::bmm(a, b); },
                                 [&] { return bmm(a, b); }));
        rows.push_back(time_pair("bmm_nt", "64x48x48x48", reps,
                                 [&] { return serial::bmm_nt(a, b); },
                                 [&] { return bmm_nt(a, b); }));
        rows.push_back(time_pair("bmm_tn", "64x48x48x48", reps,
                                 [&] { return serial::bmm_tn(a, b); },
                                 [&] { return bmm_tn(a, b); }));
    }

    {
        const Tensor<double> x = random_uniform<double>(Shape{4096, 256}, rng, -4.0, 4.0);
        rows.push_back(time_pair("softmax_rows", "4096x256", reps,
                                 [&] { return serial::softmax_rows(x); },
                                 [&] { return softmax_rows(x); }));
    }

    {
        const Tensor<double> x = random_uniform<double>(Shape{1, 64, 64, 32}, rng, -1.0, 1.0);
        const Tensor<double> w = random_uniform<double>(Shape{3, 3, 32, 32}, rng, -0.5, 0.5);
        rows.push_back(time_pair("conv2d", "64x64 c32 3x3", reps,
                                 [&] { return serial::conv2d<double>(x, w, nullptr, 1, 1); },
                                 [&] { return conv2d<double>(x, w, nullptr, 1, 1); }));
    }

    std::printf("%-14s %-14s %14s %14s %9s %6s\n", "op", "size", "serial_ns", "parallel_ns",
                "speedup", "bits");
    bool all_identical = true;
    for (const Row& r : rows) {
        const double speedup =
            r.parallel_ns > 0 ? static_cast<double>(r.serial_ns) / static_cast<double>(r.parallel_ns)
                              : 0.0;
        std::printf("%-14s %-14s %14lld %14lld %8.2fx %6s\n", r.op.c_str(), r.size.c_str(),
                    static_cast<long long>(r.serial_ns), static_cast<long long>(r.parallel_ns),
                    speedup, r.identical ? "same" : "DIFF");
        all_identical = all_identical && r.identical;
    }
    if (!all_identical) {
        std::fprintf(stderr, "error: parallel kernels diverged from the serial reference\n");
        return 1;
    }
    return 0;
}
