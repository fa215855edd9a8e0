// SPDX-License-Identifier: Apache-2.0
//
// Uniform symmetric per-tensor fake quantization:
//   q    = clamp(round_half_even(x / s) + z, qmin, qmax)
//   x_hat = s * (q - z)
// with z = 0, qmin = -qmax, qmax = 2^(bits-1) - 1 and s = threshold / qmax.
#pragma once

#include "dqss/autograd.hpp"
#include "dqss/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>

namespace dqss {

class QuantError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NonFiniteInputError : public QuantError {
public:
    NonFiniteInputError(std::size_t index, float value);
    std::size_t index() const noexcept { return index_; }

private:
    std::size_t index_;
};

constexpr int kMinBits = 2;
constexpr int kMaxBits = 8;

/// Largest positive code of the symmetric range: 2^(bits-1) - 1.
std::int32_t max_code(int bits);

struct QuantParams {
    float threshold = 1.0f;
    float scale = 1.0f / 127.0f;
    std::int32_t zero_point = 0;
    std::int32_t qmin = -127;
    std::int32_t qmax = 127;
    int bits = 8;
    /// Set when the calibration input was all zeros and threshold fell back to 1.
    bool degenerate = false;

    /// Builds params for clipping magnitude `threshold`. A non-positive or
    /// non-finite threshold becomes 1.0 with the degenerate flag set.
    static QuantParams symmetric(float threshold, int bits);
    /// Params whose scale is (up to the threshold round trip) `scale`.
    static QuantParams from_scale(float scale, int bits);

    /// Throws QuantError if the invariants do not hold.
    void validate() const;

    friend bool operator==(const QuantParams&, const QuantParams&) = default;
};

inline float fake_quant_value(float x, const QuantParams& p) noexcept;

IntTensor quantize(const Tensor& t, const QuantParams& p);
Tensor dequantize(const IntTensor& q, const QuantParams& p);
Tensor fake_quant(const Tensor& t, const QuantParams& p);
/// Elementwise fake quantization into `out` (may alias `in`); no finiteness check.
void fake_quant_into(std::span<const float> in, std::span<float> out, const QuantParams& p);
/// Clipped straight-through estimator: passes the gradient where |t| <= threshold.
Tensor ste_backward(const Tensor& upstream, const Tensor& t, const QuantParams& p);

/// Sum of squared fake-quantization error, accumulated in double.
double quantization_sse(std::span<const float> values, const QuantParams& p);

/// Records fake_quant(x, p) on the tape with the clipped-STE backward rule.
VarId fake_quant(Tape& tape, VarId x, const QuantParams& p);

inline float fake_quant_value(float x, const QuantParams& p) noexcept
{
    float q = std::nearbyint(x / p.scale) + static_cast<float>(p.zero_point);
    if (q < static_cast<float>(p.qmin)) q = static_cast<float>(p.qmin);
    if (q > static_cast<float>(p.qmax)) q = static_cast<float>(p.qmax);
    return p.scale * (q - static_cast<float>(p.zero_point));
}

} // namespace dqss
