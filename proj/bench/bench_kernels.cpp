// Serial reference against the OpenMP kernels on shapes the toy model hits.

#include <benchmark/benchmark.h>

#include <random>

#include "objcustom/kernels.hpp"

using namespace objcustom;
namespace k = objcustom::kernels;

namespace {

Tensor random_tensor(int r, int c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0, 1);
    Tensor t(r, c);
    for (auto& v : t.data) v = n(rng);
    return t;
}

template <bool Omp>
void BM_Gemm(benchmark::State& st) {
    const int n = static_cast<int>(st.range(0));
    const Tensor a = random_tensor(n, n, 1), b = random_tensor(n, n, 2);
    Tensor c(n, n);
    for (auto _ : st) {
        if constexpr (Omp) k::omp::gemm(k::Trans::N, k::Trans::N, 1.0, a, b, 0.0, c);
        else k::serial::gemm(k::Trans::N, k::Trans::N, 1.0, a, b, 0.0, c);
        benchmark::DoNotOptimize(c.data.data());
    }
    st.SetItemsProcessed(st.iterations() * 2L * n * n * n);
}

template <bool Omp>
void BM_Im2col(benchmark::State& st) {
    const int batch = static_cast<int>(st.range(0)), side = 16, ch = 32;
    const Tensor x = random_tensor(batch * side * side, ch, 3);
    for (auto _ : st) {
        Tensor cols = Omp ? k::omp::im2col3x3(x, batch, side, side) : k::serial::im2col3x3(x, batch, side, side);
        benchmark::DoNotOptimize(cols.data.data());
    }
}

template <bool Omp>
void BM_Attention(benchmark::State& st) {
    const int samples = static_cast<int>(st.range(0)), mq = 64, nk = 12, heads = 4, d = 32;
    k::AttentionLayout lay;
    lay.heads = heads;
    for (int s = 0; s <= samples; ++s) {
        lay.q_offsets.push_back(s * mq);
        lay.k_offsets.push_back(s * nk);
    }
    const Tensor q = random_tensor(samples * mq, d, 4), kk = random_tensor(samples * nk, d, 5),
                 v = random_tensor(samples * nk, d, 6);
    for (auto _ : st) {
        auto r = Omp ? k::omp::attention(q, kk, v, lay, 0.25) : k::serial::attention(q, kk, v, lay, 0.25);
        benchmark::DoNotOptimize(r.out.data.data());
    }
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_Gemm<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Im2col<false>)->Arg(8)->Arg(32);
BENCHMARK(BM_Im2col<true>)->Arg(8)->Arg(32);
BENCHMARK(BM_Attention<false>)->Arg(8)->Arg(32);
BENCHMARK(BM_Attention<true>)->Arg(8)->Arg(32);

BENCHMARK_MAIN();
