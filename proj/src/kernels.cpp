// SPDX-License-Identifier: Apache-2.0
#include "dqss/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dqss::kernels {

namespace {

using index_t = std::ptrdiff_t;

// Range of output columns whose input column ow*stride - pad + k lies in [0, in).
inline void valid_range(std::size_t out, std::size_t in, std::size_t stride, std::size_t pad, std::size_t k,
                        std::size_t& lo, std::size_t& hi)
{
    // ow*stride + k >= pad  and  ow*stride + k - pad < in
    lo = k >= pad ? 0 : (pad - k + stride - 1) / stride;
    const std::size_t limit = in + pad; // ow*stride + k < in + pad
    hi = limit > k ? std::min(out, (limit - k + stride - 1) / stride) : 0;
    if (hi < lo) hi = lo;
}

} // namespace

Conv2dDims conv2d_dims(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad)
{
    if (input.size() != 4) throw ShapeError("conv2d input must be NCHW, got " + shape_to_string(input));
    if (weight.size() != 4) throw ShapeError("conv2d weight must be OIKhKw, got " + shape_to_string(weight));
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    if (input[1] != weight[1]) {
        throw ShapeError("conv2d channel mismatch: input axis 1 (C=" + std::to_string(input[1]) +
                         ") vs weight axis 1 (C=" + std::to_string(weight[1]) + ")");
    }
    Conv2dDims d;
    d.batch = input[0];
    d.in_ch = input[1];
    d.in_h = input[2];
    d.in_w = input[3];
    d.out_ch = weight[0];
    d.k_h = weight[2];
    d.k_w = weight[3];
    d.stride = stride;
    d.pad = pad;
    if (d.in_h + 2 * pad < d.k_h) {
        throw ShapeError("conv2d kernel axis 2 (Kh=" + std::to_string(d.k_h) + ") exceeds padded input axis 2 (H=" +
                         std::to_string(d.in_h) + ")");
    }
    if (d.in_w + 2 * pad < d.k_w) {
        throw ShapeError("conv2d kernel axis 3 (Kw=" + std::to_string(d.k_w) + ") exceeds padded input axis 3 (W=" +
                         std::to_string(d.in_w) + ")");
    }
    d.out_h = (d.in_h + 2 * pad - d.k_h) / stride + 1;
    d.out_w = (d.in_w + 2 * pad - d.k_w) / stride + 1;
    return d;
}

LinearDims linear_dims(const Shape& input, const Shape& weight)
{
    if (input.size() != 2) throw ShapeError("linear input must be [N, I], got " + shape_to_string(input));
    if (weight.size() != 2) throw ShapeError("linear weight must be [O, I], got " + shape_to_string(weight));
    if (input[1] != weight[1]) {
        throw ShapeError("linear feature mismatch: input axis 1 (I=" + std::to_string(input[1]) +
                         ") vs weight axis 1 (I=" + std::to_string(weight[1]) + ")");
    }
    return {input[0], input[1], weight[0]};
}

PoolDims pool_dims(const Shape& input, std::size_t kernel, std::size_t stride)
{
    if (input.size() != 4) throw ShapeError("pool input must be NCHW, got " + shape_to_string(input));
    if (kernel < 1 || stride < 1) throw ShapeError("pool kernel and stride must be >= 1");
    if (input[2] < kernel || input[3] < kernel) {
        throw ShapeError("pool kernel " + std::to_string(kernel) + " exceeds input " + shape_to_string(input));
    }
    PoolDims d;
    d.batch = input[0];
    d.channels = input[1];
    d.in_h = input[2];
    d.in_w = input[3];
    d.kernel = kernel;
    d.stride = stride;
    d.out_h = (d.in_h - kernel) / stride + 1;
    d.out_w = (d.in_w - kernel) / stride + 1;
    return d;
}

OpCounters& op_counters()
{
    static OpCounters counters;
    return counters;
}

void conv2d_forward(const Conv2dDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y)
{
    op_counters().conv2d.fetch_add(1, std::memory_order_relaxed);
    const std::size_t plane_in = d.in_h * d.in_w;
    const std::size_t plane_out = d.out_h * d.out_w;
    const index_t jobs = static_cast<index_t>(d.batch * d.out_ch);

#pragma omp parallel for schedule(static)
    for (index_t job = 0; job < jobs; ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / d.out_ch;
        const std::size_t o = static_cast<std::size_t>(job) % d.out_ch;
        float* out = y.data() + (n * d.out_ch + o) * plane_out;
        const float b = bias.empty() ? 0.0f : bias[o];
        std::fill(out, out + plane_out, b);
        for (std::size_t c = 0; c < d.in_ch; ++c) {
            const float* in = x.data() + (n * d.in_ch + c) * plane_in;
            const float* wk = w.data() + ((o * d.in_ch + c) * d.k_h) * d.k_w;
            for (std::size_t kh = 0; kh < d.k_h; ++kh) {
                std::size_t oh_lo, oh_hi;
                valid_range(d.out_h, d.in_h, d.stride, d.pad, kh, oh_lo, oh_hi);
                for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                    const float wv = wk[kh * d.k_w + kw];
                    std::size_t ow_lo, ow_hi;
                    valid_range(d.out_w, d.in_w, d.stride, d.pad, kw, ow_lo, ow_hi);
                    for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                        const float* row = in + (oh * d.stride + kh - d.pad) * d.in_w;
                        float* orow = out + oh * d.out_w;
                        if (d.stride == 1) {
                            const float* src = row + (ow_lo + kw - d.pad);
                            float* dst = orow + ow_lo;
                            const std::size_t count = ow_hi - ow_lo;
                            for (std::size_t i = 0; i < count; ++i) dst[i] += wv * src[i];
                        } else {
                            for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                                orow[ow] += wv * row[ow * d.stride + kw - d.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_input(const Conv2dDims& d, std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx)
{
    const std::size_t plane_in = d.in_h * d.in_w;
    const std::size_t plane_out = d.out_h * d.out_w;
    const index_t jobs = static_cast<index_t>(d.batch * d.in_ch);

#pragma omp parallel for schedule(static)
    for (index_t job = 0; job < jobs; ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / d.in_ch;
        const std::size_t c = static_cast<std::size_t>(job) % d.in_ch;
        float* gin = dx.data() + (n * d.in_ch + c) * plane_in;
        for (std::size_t o = 0; o < d.out_ch; ++o) {
            const float* g = dy.data() + (n * d.out_ch + o) * plane_out;
            const float* wk = w.data() + ((o * d.in_ch + c) * d.k_h) * d.k_w;
            for (std::size_t kh = 0; kh < d.k_h; ++kh) {
                std::size_t oh_lo, oh_hi;
                valid_range(d.out_h, d.in_h, d.stride, d.pad, kh, oh_lo, oh_hi);
                for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                    const float wv = wk[kh * d.k_w + kw];
                    std::size_t ow_lo, ow_hi;
                    valid_range(d.out_w, d.in_w, d.stride, d.pad, kw, ow_lo, ow_hi);
                    for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                        float* row = gin + (oh * d.stride + kh - d.pad) * d.in_w;
                        const float* grow = g + oh * d.out_w;
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                            row[ow * d.stride + kw - d.pad] += wv * grow[ow];
                        }
                    }
                }
            }
        }
    }
}

void conv2d_backward_weight(const Conv2dDims& d, std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw)
{
    const std::size_t plane_in = d.in_h * d.in_w;
    const std::size_t plane_out = d.out_h * d.out_w;
    const index_t jobs = static_cast<index_t>(d.out_ch * d.in_ch);

#pragma omp parallel for schedule(static)
    for (index_t job = 0; job < jobs; ++job) {
        const std::size_t o = static_cast<std::size_t>(job) / d.in_ch;
        const std::size_t c = static_cast<std::size_t>(job) % d.in_ch;
        float* gw = dw.data() + ((o * d.in_ch + c) * d.k_h) * d.k_w;
        for (std::size_t kh = 0; kh < d.k_h; ++kh) {
            std::size_t oh_lo, oh_hi;
            valid_range(d.out_h, d.in_h, d.stride, d.pad, kh, oh_lo, oh_hi);
            for (std::size_t kw = 0; kw < d.k_w; ++kw) {
                std::size_t ow_lo, ow_hi;
                valid_range(d.out_w, d.in_w, d.stride, d.pad, kw, ow_lo, ow_hi);
                float acc = 0.0f;
                for (std::size_t n = 0; n < d.batch; ++n) {
                    const float* g = dy.data() + (n * d.out_ch + o) * plane_out;
                    const float* in = x.data() + (n * d.in_ch + c) * plane_in;
                    for (std::size_t oh = oh_lo; oh < oh_hi; ++oh) {
                        const float* row = in + (oh * d.stride + kh - d.pad) * d.in_w;
                        const float* grow = g + oh * d.out_w;
                        for (std::size_t ow = ow_lo; ow < ow_hi; ++ow) {
                            acc += grow[ow] * row[ow * d.stride + kw - d.pad];
                        }
                    }
                }
                gw[kh * d.k_w + kw] += acc;
            }
        }
    }
}

void conv2d_backward_bias(const Conv2dDims& d, std::span<const float> dy, std::span<float> db)
{
    const std::size_t plane_out = d.out_h * d.out_w;
    for (std::size_t o = 0; o < d.out_ch; ++o) {
        float acc = 0.0f;
        for (std::size_t n = 0; n < d.batch; ++n) {
            const float* g = dy.data() + (n * d.out_ch + o) * plane_out;
            for (std::size_t i = 0; i < plane_out; ++i) acc += g[i];
        }
        db[o] += acc;
    }
}

void linear_forward(const LinearDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y)
{
    op_counters().linear.fetch_add(1, std::memory_order_relaxed);
    const index_t jobs = static_cast<index_t>(d.batch * d.out_features);

#pragma omp parallel for schedule(static)
    for (index_t job = 0; job < jobs; ++job) {
        const std::size_t n = static_cast<std::size_t>(job) / d.out_features;
        const std::size_t o = static_cast<std::size_t>(job) % d.out_features;
        const float* xr = x.data() + n * d.in_features;
        const float* wr = w.data() + o * d.in_features;
        float acc = bias.empty() ? 0.0f : bias[o];
        for (std::size_t i = 0; i < d.in_features; ++i) acc += xr[i] * wr[i];
        y[static_cast<std::size_t>(job)] = acc;
    }
}

void linear_backward_input(const LinearDims& d, std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx)
{
    const index_t rows = static_cast<index_t>(d.batch);
#pragma omp parallel for schedule(static)
    for (index_t n = 0; n < rows; ++n) {
        float* gx = dx.data() + static_cast<std::size_t>(n) * d.in_features;
        const float* g = dy.data() + static_cast<std::size_t>(n) * d.out_features;
        for (std::size_t o = 0; o < d.out_features; ++o) {
            const float go = g[o];
            const float* wr = w.data() + o * d.in_features;
            for (std::size_t i = 0; i < d.in_features; ++i) gx[i] += go * wr[i];
        }
    }
}

void linear_backward_weight(const LinearDims& d, std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw)
{
    const index_t outs = static_cast<index_t>(d.out_features);
#pragma omp parallel for schedule(static)
    for (index_t o = 0; o < outs; ++o) {
        float* gw = dw.data() + static_cast<std::size_t>(o) * d.in_features;
        for (std::size_t n = 0; n < d.batch; ++n) {
            const float go = dy[n * d.out_features + static_cast<std::size_t>(o)];
            const float* xr = x.data() + n * d.in_features;
            for (std::size_t i = 0; i < d.in_features; ++i) gw[i] += go * xr[i];
        }
    }
}

void linear_backward_bias(const LinearDims& d, std::span<const float> dy, std::span<float> db)
{
    for (std::size_t o = 0; o < d.out_features; ++o) {
        float acc = 0.0f;
        for (std::size_t n = 0; n < d.batch; ++n) acc += dy[n * d.out_features + o];
        db[o] += acc;
    }
}

void batchnorm_forward(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const float> x,
                       std::span<const float> mean, std::span<const float> var, std::span<const float> gamma,
                       std::span<const float> beta, float eps, std::span<float> y)
{
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const float inv = gamma[c] / std::sqrt(var[c] + eps);
            const float shift = beta[c] - mean[c] * inv;
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) y[base + i] = x[base + i] * inv + shift;
        }
    }
}

void batchnorm_backward_input(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const float> dy,
                              std::span<const float> var, std::span<const float> gamma, float eps,
                              std::span<float> dx)
{
    for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            const float inv = gamma[c] / std::sqrt(var[c] + eps);
            const std::size_t base = (n * channels + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dx[base + i] += dy[base + i] * inv;
        }
    }
}

void maxpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y)
{
    const std::size_t planes = d.batch * d.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* in = x.data() + p * d.in_h * d.in_w;
        float* out = y.data() + p * d.out_h * d.out_w;
        for (std::size_t oh = 0; oh < d.out_h; ++oh) {
            for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                float best = -std::numeric_limits<float>::infinity();
                for (std::size_t kh = 0; kh < d.kernel; ++kh) {
                    for (std::size_t kw = 0; kw < d.kernel; ++kw) {
                        best = std::max(best, in[(oh * d.stride + kh) * d.in_w + ow * d.stride + kw]);
                    }
                }
                out[oh * d.out_w + ow] = best;
            }
        }
    }
}

void maxpool_backward(const PoolDims& d, std::span<const float> x, std::span<const float> dy, std::span<float> dx)
{
    // Ties route the gradient to the first maximal element in scan order.
    const std::size_t planes = d.batch * d.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* in = x.data() + p * d.in_h * d.in_w;
        const float* g = dy.data() + p * d.out_h * d.out_w;
        float* gin = dx.data() + p * d.in_h * d.in_w;
        for (std::size_t oh = 0; oh < d.out_h; ++oh) {
            for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                std::size_t arg = (oh * d.stride) * d.in_w + ow * d.stride;
                for (std::size_t kh = 0; kh < d.kernel; ++kh) {
                    for (std::size_t kw = 0; kw < d.kernel; ++kw) {
                        const std::size_t idx = (oh * d.stride + kh) * d.in_w + ow * d.stride + kw;
                        if (in[idx] > in[arg]) arg = idx;
                    }
                }
                gin[arg] += g[oh * d.out_w + ow];
            }
        }
    }
}

void avgpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y)
{
    const float norm = 1.0f / static_cast<float>(d.kernel * d.kernel);
    const std::size_t planes = d.batch * d.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* in = x.data() + p * d.in_h * d.in_w;
        float* out = y.data() + p * d.out_h * d.out_w;
        for (std::size_t oh = 0; oh < d.out_h; ++oh) {
            for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                float acc = 0.0f;
                for (std::size_t kh = 0; kh < d.kernel; ++kh) {
                    for (std::size_t kw = 0; kw < d.kernel; ++kw) {
                        acc += in[(oh * d.stride + kh) * d.in_w + ow * d.stride + kw];
                    }
                }
                out[oh * d.out_w + ow] = acc * norm;
            }
        }
    }
}

void avgpool_backward(const PoolDims& d, std::span<const float> dy, std::span<float> dx)
{
    const float norm = 1.0f / static_cast<float>(d.kernel * d.kernel);
    const std::size_t planes = d.batch * d.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* g = dy.data() + p * d.out_h * d.out_w;
        float* gin = dx.data() + p * d.in_h * d.in_w;
        for (std::size_t oh = 0; oh < d.out_h; ++oh) {
            for (std::size_t ow = 0; ow < d.out_w; ++ow) {
                const float v = g[oh * d.out_w + ow] * norm;
                for (std::size_t kh = 0; kh < d.kernel; ++kh) {
                    for (std::size_t kw = 0; kw < d.kernel; ++kw) {
                        gin[(oh * d.stride + kh) * d.in_w + ow * d.stride + kw] += v;
                    }
                }
            }
        }
    }
}

void set_num_threads(int threads)
{
#ifdef _OPENMP
    if (threads > 0) omp_set_num_threads(threads);
#else
    (void)threads;
#endif
}

int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace dqss::kernels
