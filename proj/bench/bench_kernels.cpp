// SPDX-License-Identifier: Apache-2.0
//
// Serial reference operators versus the OpenMP kernels, and the efficient
// mixture versus its N^2 expansion.
#include "dqss/calibrators.hpp"
#include "dqss/kernels.hpp"
#include "dqss/mixture.hpp"
#include "dqss/reference.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

namespace {

using namespace dqss;

std::vector<float> random_values(std::size_t n, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> d(0.0f, 1.0f);
    std::vector<float> v(n);
    for (float& x : v) x = d(rng);
    return v;
}

kernels::Conv2dDims conv_dims(std::size_t channels)
{
    return kernels::conv2d_dims({8, channels, 32, 32}, {channels, channels, 3, 3}, 1, 1);
}

void BM_Conv2dReference(benchmark::State& state)
{
    const auto d = conv_dims(static_cast<std::size_t>(state.range(0)));
    const auto x = random_values(d.input_size(), 1);
    const auto w = random_values(d.weight_size(), 2);
    const auto b = random_values(d.out_ch, 3);
    for (auto _ : state) {
        auto y = reference::conv2d<float>(d, x, w, b);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.output_size() * d.weight_size() / d.out_ch));
}

void BM_Conv2dKernel(benchmark::State& state)
{
    const auto d = conv_dims(static_cast<std::size_t>(state.range(0)));
    const auto x = random_values(d.input_size(), 1);
    const auto w = random_values(d.weight_size(), 2);
    const auto b = random_values(d.out_ch, 3);
    std::vector<float> y(d.output_size());
    for (auto _ : state) {
        kernels::conv2d_forward(d, x, w, b, y);
        benchmark::DoNotOptimize(y.data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(d.output_size() * d.weight_size() / d.out_ch));
}

BENCHMARK(BM_Conv2dReference)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv2dKernel)->Arg(8)->Arg(16)->Unit(benchmark::kMillisecond);

MixtureLayer conv_mixture(std::size_t n)
{
    MixtureLayer m;
    m.layer.kind = LayerKind::Conv2d;
    m.layer.name = "conv";
    m.layer.padding = 1;
    Tensor w({16, 16, 3, 3});
    w.storage() = random_values(w.numel(), 4);
    m.layer.weight = make_param(w, false);
    for (std::size_t i = 0; i < n; ++i) {
        const float t = 2.0f + 0.5f * static_cast<float>(i);
        m.activation.push_back(QuantParams::symmetric(t, 8));
        m.weight.push_back(QuantParams::symmetric(t, 8));
    }
    return m;
}

template <bool Efficient>
void BM_Mixture(benchmark::State& state)
{
    const auto n = static_cast<std::size_t>(state.range(0));
    const MixtureLayer m = conv_mixture(n);
    Tensor x({8, 16, 32, 32});
    x.storage() = random_values(x.numel(), 5);
    const std::vector<float> theta(n, 1.0f / static_cast<float>(n));
    for (auto _ : state) {
        Tensor y = Efficient ? mixture_forward_efficient(m, x, theta, theta) : mixture_forward_naive(m, x, theta, theta);
        benchmark::DoNotOptimize(y.data().data());
    }
}

BENCHMARK(BM_Mixture<true>)->Name("BM_MixtureEfficient")->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Mixture<false>)->Name("BM_MixtureNaive")->Arg(1)->Arg(2)->Arg(4)->Unit(benchmark::kMillisecond);

} // namespace

BENCHMARK_MAIN();
