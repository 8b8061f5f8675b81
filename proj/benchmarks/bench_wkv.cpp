#include <benchmark/benchmark.h>

#include "dpcqa/rng.hpp"
#include "dpcqa/wkv.hpp"

using namespace dpcqa;

namespace {

struct WkvInputs {
    TensorPtr<float> k, v, w, u;
};

WkvInputs make_inputs(int64_t n, int64_t d, uint64_t seed) {
    Rng rng(seed);
    WkvInputs in;
    in.k = make_tensor<float>({n, d});
    in.v = make_tensor<float>({n, d});
    in.w = make_tensor<float>({d});
    in.u = make_tensor<float>({d});
    for (auto& x : in.k->data) x = static_cast<float>(rng.normal(0, 1));
    for (auto& x : in.v->data) x = static_cast<float>(rng.normal(0, 1));
    for (auto& x : in.w->data) x = static_cast<float>(rng.uniform(0.05, 1.0));
    for (auto& x : in.u->data) x = static_cast<float>(rng.normal(0, 0.5));
    return in;
}

void bench_wkv_linear(benchmark::State& state) {
    auto in = make_inputs(state.range(0), 64, 42);
    Tape<float> tape;
    for (auto _ : state) {
        auto out = wkv(tape, in.k, in.v, in.w, in.u);
        benchmark::DoNotOptimize(out->data.data());
    }
    state.SetComplexityN(state.range(0));
}

void bench_wkv_direct(benchmark::State& state) {
    auto in = make_inputs(state.range(0), 64, 42);
    for (auto _ : state) {
        auto out = wkv_reference_values(in.k, in.v, in.w, in.u);
        benchmark::DoNotOptimize(out->data.data());
    }
    state.SetComplexityN(state.range(0));
}

}  // namespace

BENCHMARK(bench_wkv_linear)->RangeMultiplier(2)->Range(64, 2048)->Complexity(benchmark::oN);
BENCHMARK(bench_wkv_direct)->RangeMultiplier(2)->Range(64, 1024)->Complexity(benchmark::oNSquared);

BENCHMARK_MAIN();
