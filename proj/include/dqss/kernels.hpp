// SPDX-License-Identifier: Apache-2.0
//
// OpenMP compute kernels for the neural operators. Every kernel assigns each
// output element to exactly one thread with a fixed accumulation order, so
// results are bit-identical for any thread count. The serial naive versions
// in reference.hpp are the oracles these are tested against.
#pragma once

#include "dqss/tensor.hpp"

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <span>

namespace dqss::kernels {

struct Conv2dDims {
    std::size_t batch = 0, in_ch = 0, in_h = 0, in_w = 0;
    std::size_t out_ch = 0, k_h = 0, k_w = 0;
    std::size_t stride = 1, pad = 0;
    std::size_t out_h = 0, out_w = 0;

    std::size_t input_size() const { return batch * in_ch * in_h * in_w; }
    std::size_t weight_size() const { return out_ch * in_ch * k_h * k_w; }
    std::size_t output_size() const { return batch * out_ch * out_h * out_w; }
    Shape output_shape() const { return {batch, out_ch, out_h, out_w}; }
};

/// Validates NCHW input against OIKhKw weight and derives the output size.
Conv2dDims conv2d_dims(const Shape& input, const Shape& weight, std::size_t stride, std::size_t pad);

struct LinearDims {
    std::size_t batch = 0, in_features = 0, out_features = 0;
};

LinearDims linear_dims(const Shape& input, const Shape& weight);

struct PoolDims {
    std::size_t batch = 0, channels = 0, in_h = 0, in_w = 0;
    std::size_t kernel = 2, stride = 2;
    std::size_t out_h = 0, out_w = 0;
    Shape output_shape() const { return {batch, channels, out_h, out_w}; }
};

PoolDims pool_dims(const Shape& input, std::size_t kernel, std::size_t stride);

/// Counts layer-operator invocations; used to check how many convolutions a
/// mixture evaluation performs.
struct OpCounters {
    std::atomic<std::uint64_t> conv2d{0};
    std::atomic<std::uint64_t> linear{0};
    void reset()
    {
        conv2d = 0;
        linear = 0;
    }
};

OpCounters& op_counters();

// Forward kernels overwrite `y`. Backward kernels accumulate (+=) into their
// gradient outputs.

void conv2d_forward(const Conv2dDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y);
void conv2d_backward_input(const Conv2dDims& d, std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx);
void conv2d_backward_weight(const Conv2dDims& d, std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw);
void conv2d_backward_bias(const Conv2dDims& d, std::span<const float> dy, std::span<float> db);

void linear_forward(const LinearDims& d, std::span<const float> x, std::span<const float> w,
                    std::span<const float> bias, std::span<float> y);
void linear_backward_input(const LinearDims& d, std::span<const float> dy, std::span<const float> w,
                           std::span<float> dx);
void linear_backward_weight(const LinearDims& d, std::span<const float> dy, std::span<const float> x,
                            std::span<float> dw);
void linear_backward_bias(const LinearDims& d, std::span<const float> dy, std::span<float> db);

/// Inference batchnorm over NC(HW): y = gamma * (x - mean) / sqrt(var + eps) + beta.
void batchnorm_forward(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const float> x,
                       std::span<const float> mean, std::span<const float> var, std::span<const float> gamma,
                       std::span<const float> beta, float eps, std::span<float> y);
void batchnorm_backward_input(std::size_t batch, std::size_t channels, std::size_t plane, std::span<const float> dy,
                              std::span<const float> var, std::span<const float> gamma, float eps,
                              std::span<float> dx);

void maxpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y);
void maxpool_backward(const PoolDims& d, std::span<const float> x, std::span<const float> dy, std::span<float> dx);
void avgpool_forward(const PoolDims& d, std::span<const float> x, std::span<float> y);
void avgpool_backward(const PoolDims& d, std::span<const float> dy, std::span<float> dx);

/// Caps OpenMP parallelism; values < 1 leave the runtime default.
void set_num_threads(int threads);
int max_threads();

} // namespace dqss::kernels
