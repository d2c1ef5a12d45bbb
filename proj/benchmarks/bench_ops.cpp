#include <benchmark/benchmark.h>

#include "mren/model.hpp"
#include "mren/ops.hpp"
#include "mren/rng.hpp"

namespace {

using namespace mren;

Tensor4f random_tensor(const Dims4& d, std::uint64_t seed) {
    Tensor4f t(d);
    Rng rng(seed);
    for (std::int64_t i = 0; i < t.count(); ++i)
        t.data()[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return t;
}

void bench_conv3x3(benchmark::State& state) {
    const auto c = static_cast<int>(state.range(0));
    ConvSpec spec{c, c, 3, 3, 1, true};
    const auto x = random_tensor({1, c, 64, 64}, 1);
    const auto w = random_tensor(spec.weight_dims(), 2);
    const auto b = random_tensor(spec.bias_dims(), 3);
    for (auto _ : state) {
        auto y = ops::conv2d(x, w, &b, spec);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * 64 * 64);
}
BENCHMARK(bench_conv3x3)->Arg(20)->Arg(60);

void bench_depthwise5x5(benchmark::State& state) {
    ConvSpec spec{60, 60, 5, 5, 60, true};
    const auto x = random_tensor({1, 60, 64, 64}, 1);
    const auto w = random_tensor(spec.weight_dims(), 2);
    const auto b = random_tensor(spec.bias_dims(), 3);
    for (auto _ : state) {
        auto y = ops::conv2d(x, w, &b, spec);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(bench_depthwise5x5);

void bench_resize_bicubic_x4(benchmark::State& state) {
    const auto x = random_tensor({1, 3, 64, 64}, 1);
    for (auto _ : state) {
        auto y = ops::resize_up(ops::ResizeKind::bicubic, x, 4);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(bench_resize_bicubic_x4);

void bench_mreb_forward(benchmark::State& state) {
    model::ModelConfig cfg;
    model::MrenModelf m(cfg, 1);
    const auto x = random_tensor({1, cfg.base_channels, 48, 48}, 4);
    for (auto _ : state) {
        auto y = m.mreb_forward(nullptr, m.mrebs()[0], autograd::make_value(Tensor4f(x)));
        benchmark::DoNotOptimize(y.t().data());
    }
}
BENCHMARK(bench_mreb_forward);

void bench_full_forward_x4(benchmark::State& state) {
    model::ModelConfig cfg;
    model::MrenModelf m(cfg, 1);
    const auto x = random_tensor({1, 3, 32, 32}, 5);
    for (auto _ : state) {
        auto y = m.forward_eval(x);
        benchmark::DoNotOptimize(y.data());
    }
}
BENCHMARK(bench_full_forward_x4);

} // namespace

BENCHMARK_MAIN();
