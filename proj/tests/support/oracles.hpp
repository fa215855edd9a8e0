// SPDX-License-Identifier: Apache-2.0
//
// Small helpers shared by the unit and acceptance tests: random tensors,
// double-precision central differences and error norms.
#pragma once

#include "dqss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

namespace dqss::testing {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, float lo = -1.0f, float hi = 1.0f)
{
    std::uniform_real_distribution<float> dist(lo, hi);
    Tensor t(std::move(shape));
    for (float& v : t.storage()) v = dist(rng);
    return t;
}

inline Tensor normal_tensor(Shape shape, std::mt19937_64& rng, float sigma = 1.0f)
{
    std::normal_distribution<float> dist(0.0f, sigma);
    Tensor t(std::move(shape));
    for (float& v : t.storage()) v = dist(rng);
    return t;
}

inline std::vector<double> to_double(std::span<const float> v)
{
    return {v.begin(), v.end()};
}

/// Central differences of f at x, evaluated in double.
inline std::vector<double> central_difference(const std::function<double(const std::vector<double>&)>& f,
                                              std::vector<double> x, double h)
{
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double up = f(x);
        x[i] = orig - h;
        const double down = f(x);
        x[i] = orig;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// max_i |a_i - b_i| / max(|b_i|, floor).
inline double max_relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-6)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
    }
    return worst;
}

/// ||a - b||_inf / max(||b||_inf, floor): scale-aware error for whole tensors.
inline double relative_inf_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12)
{
    double diff = 0.0;
    double norm = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff = std::max(diff, std::abs(a[i] - b[i]));
        norm = std::max(norm, std::abs(b[i]));
    }
    return diff / std::max(norm, floor);
}

inline double dot(std::span<const double> a, std::span<const double> b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

} // namespace dqss::testing
