// SPDX-License-Identifier: Apache-2.0
//
// Serial, loop-for-loop reference operators. These are deliberately naive and
// share no code with kernels.cpp; tests instantiate them in double precision
// as oracles, and the benchmark uses the float instantiation as the baseline.
#pragma once

#include "dqss/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

namespace dqss::reference {

template <typename T>
std::vector<T> conv2d(const kernels::Conv2dDims& d, std::span<const T> x, std::span<const T> w,
                      std::span<const T> bias)
{
    std::vector<T> y(d.output_size());
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t o = 0; o < d.out_ch; ++o)
            for (std::size_t oh = 0; oh < d.out_h; ++oh)
                for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                    T acc = bias.empty() ? T(0) : bias[o];
                    for (std::size_t c = 0; c < d.in_ch; ++c)
                        for (std::size_t kh = 0; kh < d.k_h; ++kh)
                            for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                                const long ih = static_cast<long>(oh * d.stride + kh) - static_cast<long>(d.pad);
                                const long iw = static_cast<long>(ow * d.stride + kw) - static_cast<long>(d.pad);
                                if (ih < 0 || iw < 0 || ih >= static_cast<long>(d.in_h) ||
                                    iw >= static_cast<long>(d.in_w))
                                    continue;
                                acc += x[((n * d.in_ch + c) * d.in_h + static_cast<std::size_t>(ih)) * d.in_w +
                                         static_cast<std::size_t>(iw)] *
                                       w[((o * d.in_ch + c) * d.k_h + kh) * d.k_w + kw];
                            }
                    y[((n * d.out_ch + o) * d.out_h + oh) * d.out_w + ow] = acc;
                }
    return y;
}

template <typename T>
std::vector<T> linear(const kernels::LinearDims& d, std::span<const T> x, std::span<const T> w,
                      std::span<const T> bias)
{
    std::vector<T> y(d.batch * d.out_features);
    for (std::size_t n = 0; n < d.batch; ++n)
        for (std::size_t o = 0; o < d.out_features; ++o) {
            T acc = bias.empty() ? T(0) : bias[o];
            for (std::size_t i = 0; i < d.in_features; ++i) acc += x[n * d.in_features + i] * w[o * d.in_features + i];
            y[n * d.out_features + o] = acc;
        }
    return y;
}

template <typename T>
std::vector<T> relu(std::span<const T> x)
{
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    return y;
}

template <typename T>
std::vector<T> batchnorm(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const T> x,
                         std::span<const T> mean, std::span<const T> var, std::span<const T> gamma,
                         std::span<const T> beta, T eps)
{
    std::vector<T> y(x.size());
    for (std::size_t n = 0; n < batch; ++n)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t k = (n * channels + c) * plane + i;
                y[k] = gamma[c] * (x[k] - mean[c]) / std::sqrt(var[c] + eps) + beta[c];
            }
    return y;
}

template <typename T>
std::vector<T> pool(const kernels::PoolDims& d, std::span<const T> x, bool max_pool)
{
    std::vector<T> y(d.batch * d.channels * d.out_h * d.out_w);
    for (std::size_t p = 0; p < d.batch * d.channels; ++p)
        for (std::size_t oh = 0; oh < d.out_h; ++oh)
            for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                T acc = max_pool ? -std::numeric_limits<T>::infinity() : T(0);
                for (std::size_t kh = 0; kh < d.kernel; ++kh)
                    for (std::size_t kw = 0; kw < d.kernel; ++kw) {
                        const T v = x[(p * d.in_h + oh * d.stride + kh) * d.in_w + ow * d.stride + kw];
                        acc = max_pool ? std::max(acc, v) : acc + v;
                    }
                if (!max_pool) acc /= static_cast<T>(d.kernel * d.kernel);
                y[(p * d.out_h + oh) * d.out_w + ow] = acc;
            }
    return y;
}

/// Mean softmax cross-entropy over a [batch, classes] logit matrix.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, std::size_t classes, std::span<const int> labels)
{
    const std::size_t batch = labels.size();
    T total = 0;
    for (std::size_t n = 0; n < batch; ++n) {
        const T* row = logits.data() + n * classes;
        T m = row[0];
        for (std::size_t k = 1; k < classes; ++k) m = std::max(m, row[k]);
        T z = 0;
        for (std::size_t k = 0; k < classes; ++k) z += std::exp(row[k] - m);
        total += std::log(z) + m - row[static_cast<std::size_t>(labels[n])];
    }
    return total / static_cast<T>(batch);
}

} // namespace dqss::reference
