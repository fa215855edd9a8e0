// SPDX-License-Identifier: Apache-2.0
//
// Random mixture-layer cases and a double-precision N^2 oracle built on the
// serial reference operators.
#pragma once

#include "dqss/kernels.hpp"
#include "dqss/mixture.hpp"
#include "dqss/reference.hpp"

#include "support/oracles.hpp"

#include <algorithm>
#include <cstddef>
#include <random>
#include <vector>

namespace dqss::testing {

struct MixtureCase {
    MixtureLayer mixture;
    Tensor input;
    std::vector<float> theta_a;
    std::vector<float> theta_b;
};

inline std::vector<float> random_theta(std::size_t n, std::mt19937_64& rng)
{
    std::normal_distribution<float> raw(0.0f, 1.5f);
    std::vector<float> r(n);
    for (float& v : r) v = raw(rng);
    return softmax_theta(r);
}

inline std::vector<QuantParams> random_branches(const Tensor& t, std::size_t n, int bits, std::mt19937_64& rng)
{
    float m = 0.0f;
    for (float v : t.storage()) m = std::max(m, std::abs(v));
    std::uniform_real_distribution<float> frac(0.3f, 1.2f);
    std::vector<QuantParams> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(QuantParams::symmetric(frac(rng) * m, bits));
    return out;
}

/// Conv2d or linear layer with random shape, N in {1, 2, 4}, random θ and
/// branch thresholds at 4 or 8 bits.
inline MixtureCase random_mixture_case(std::mt19937_64& rng)
{
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    const std::size_t ns[] = {1, 2, 4};
    const std::size_t n = ns[pick(0, 2)];
    const int bits = pick(0, 1) == 0 ? 4 : 8;

    MixtureCase c;
    Layer& l = c.mixture.layer;
    l.name = "layer";
    const std::size_t batch = pick(1, 3);
    if (pick(0, 3) != 0) {
        l.kind = LayerKind::Conv2d;
        const std::size_t cin = pick(1, 4), cout = pick(1, 5), k = pick(0, 1) == 0 ? 1 : 3;
        l.stride = pick(1, 2);
        l.padding = k == 3 ? pick(0, 1) : 0;
        const std::size_t h = pick(k, 8), w = pick(k, 8);
        l.weight = make_param(normal_tensor({cout, cin, k, k}, rng, 0.5f), false);
        l.bias = make_param(normal_tensor({cout}, rng, 0.2f), false);
        c.input = normal_tensor({batch, cin, h, w}, rng);
    } else {
        l.kind = LayerKind::Linear;
        const std::size_t fin = pick(1, 24), fout = pick(1, 10);
        l.weight = make_param(normal_tensor({fout, fin}, rng, 0.5f), false);
        if (pick(0, 1) == 0) l.bias = make_param(normal_tensor({fout}, rng, 0.2f), false);
        c.input = normal_tensor({batch, fin}, rng);
    }
    c.mixture.activation = random_branches(c.input, n, bits, rng);
    c.mixture.weight = random_branches(*l.weight, n, bits, rng);
    c.theta_a = random_theta(n, rng);
    c.theta_b = random_theta(n, rng);
    return c;
}

/// sum_i sum_j θa_i θb_j op(fq(A, pa_i), fq(W, pw_j)) accumulated in double.
inline std::vector<double> naive_mixture_oracle(const MixtureCase& c)
{
    const Layer& l = c.mixture.layer;
    const std::vector<double> bias = l.bias ? to_double(l.bias->data()) : std::vector<double>{};
    std::vector<double> y;
    for (std::size_t i = 0; i < c.mixture.branches(); ++i) {
        const std::vector<double> a = to_double(fake_quant(c.input, c.mixture.activation[i]).data());
        for (std::size_t j = 0; j < c.mixture.branches(); ++j) {
            const std::vector<double> w = to_double(fake_quant(*l.weight, c.mixture.weight[j]).data());
            std::vector<double> yij;
            if (l.kind == LayerKind::Conv2d) {
                const auto d = kernels::conv2d_dims(c.input.shape(), l.weight->shape(), l.stride, l.padding);
                yij = reference::conv2d<double>(d, a, w, bias);
            } else {
                const auto d = kernels::linear_dims(c.input.shape(), l.weight->shape());
                yij = reference::linear<double>(d, a, w, bias);
            }
            if (y.empty()) y.assign(yij.size(), 0.0);
            const double coef = static_cast<double>(c.theta_a[i]) * static_cast<double>(c.theta_b[j]);
            for (std::size_t k = 0; k < y.size(); ++k) y[k] += coef * yij[k];
        }
    }
    return y;
}

struct MixtureCheck {
    double deviation = 0.0;           // efficient vs double oracle
    double naive_deviation = 0.0;     // library N^2 path vs double oracle
    std::uint64_t efficient_ops = 0;
    std::uint64_t naive_ops = 0;
    std::size_t efficient_peak = 0;   // full-size mixture tensors alive at once
    std::size_t naive_peak = 0;
};

inline MixtureCheck check_mixture_case(const MixtureCase& c)
{
    auto ops = [] {
        auto& k = kernels::op_counters();
        return k.conv2d.load() + k.linear.load();
    };
    MixtureCheck r;
    const std::vector<double> oracle = naive_mixture_oracle(c);

    kernels::op_counters().reset();
    reset_branch_tensor_peak();
    const std::size_t base = branch_tensor_stats().live;
    const Tensor eff = mixture_forward_efficient(c.mixture, c.input, c.theta_a, c.theta_b);
    r.efficient_ops = ops();
    r.efficient_peak = branch_tensor_stats().peak - base;

    kernels::op_counters().reset();
    reset_branch_tensor_peak();
    const Tensor nai = mixture_forward_naive(c.mixture, c.input, c.theta_a, c.theta_b);
    r.naive_ops = ops();
    r.naive_peak = branch_tensor_stats().peak - base;

    r.deviation = relative_inf_error(to_double(eff.data()), oracle);
    r.naive_deviation = relative_inf_error(to_double(nai.data()), oracle);
    return r;
}

} // namespace dqss::testing
