// SPDX-License-Identifier: Apache-2.0
#include "dqss/quantizer.hpp"

#include <cmath>
#include <sstream>

namespace dqss {

namespace {

void check_bits(int bits)
{
    if (bits < kMinBits || bits > kMaxBits) {
        throw QuantError("bit width " + std::to_string(bits) + " outside [" + std::to_string(kMinBits) + ", " +
                         std::to_string(kMaxBits) + "]");
    }
}

void check_finite(std::span<const float> values)
{
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw NonFiniteInputError(i, values[i]);
    }
}

} // namespace

NonFiniteInputError::NonFiniteInputError(std::size_t index, float value)
    : QuantError([&] {
          std::ostringstream os;
          os << "non-finite input " << value << " at index " << index;
          return os.str();
      }()),
      index_(index)
{
}

std::int32_t max_code(int bits)
{
    check_bits(bits);
    return (std::int32_t{1} << (bits - 1)) - 1;
}

QuantParams QuantParams::symmetric(float threshold, int bits)
{
    QuantParams p;
    p.bits = bits;
    p.qmax = max_code(bits);
    p.qmin = -p.qmax;
    p.zero_point = 0;
    p.degenerate = !(threshold > 0.0f) || !std::isfinite(threshold);
    p.threshold = p.degenerate ? 1.0f : threshold;
    p.scale = p.threshold / static_cast<float>(p.qmax);
    if (!(p.scale > 0.0f)) {
        // threshold so small that t / qmax underflows
        p.degenerate = true;
        p.threshold = 1.0f;
        p.scale = p.threshold / static_cast<float>(p.qmax);
    }
    return p;
}

QuantParams QuantParams::from_scale(float scale, int bits)
{
    return symmetric(scale * static_cast<float>(max_code(bits)), bits);
}

void QuantParams::validate() const
{
    check_bits(bits);
    if (!(threshold > 0.0f) || !std::isfinite(threshold)) throw QuantError("threshold must be positive and finite");
    if (!(scale > 0.0f) || !std::isfinite(scale)) throw QuantError("scale must be positive and finite");
    if (qmax != max_code(bits)) throw QuantError("qmax must equal 2^(bits-1) - 1");
    if (qmin != -qmax || zero_point != 0) throw QuantError("symmetric params need qmin = -qmax and zero_point = 0");
    if (scale != threshold / static_cast<float>(qmax)) throw QuantError("scale must equal threshold / qmax");
}

IntTensor quantize(const Tensor& t, const QuantParams& p)
{
    check_finite(t.data());
    IntTensor q{t.shape(), std::vector<std::int32_t>(t.numel())};
    for (std::size_t i = 0; i < t.numel(); ++i) {
        float v = std::nearbyint(t[i] / p.scale) + static_cast<float>(p.zero_point);
        v = std::min(std::max(v, static_cast<float>(p.qmin)), static_cast<float>(p.qmax));
        q.data[i] = static_cast<std::int32_t>(v);
    }
    return q;
}

Tensor dequantize(const IntTensor& q, const QuantParams& p)
{
    Tensor out(q.shape);
    for (std::size_t i = 0; i < q.data.size(); ++i) {
        if (q.data[i] < p.qmin || q.data[i] > p.qmax) {
            throw QuantError("code " + std::to_string(q.data[i]) + " at index " + std::to_string(i) + " outside [" +
                             std::to_string(p.qmin) + ", " + std::to_string(p.qmax) + "]");
        }
        out[i] = p.scale * static_cast<float>(q.data[i] - p.zero_point);
    }
    return out;
}

void fake_quant_into(std::span<const float> in, std::span<float> out, const QuantParams& p)
{
    const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.size());
#pragma omp parallel for schedule(static) if (n > 65536)
    for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = fake_quant_value(in[static_cast<std::size_t>(i)], p);
}

Tensor fake_quant(const Tensor& t, const QuantParams& p)
{
    check_finite(t.data());
    Tensor out(t.shape());
    fake_quant_into(t.data(), out.data(), p);
    return out;
}

Tensor ste_backward(const Tensor& upstream, const Tensor& t, const QuantParams& p)
{
    check_same_shape(upstream.shape(), t.shape(), "ste_backward");
    Tensor g(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) g[i] = std::fabs(t[i]) <= p.threshold ? upstream[i] : 0.0f;
    return g;
}

double quantization_sse(std::span<const float> values, const QuantParams& p)
{
    double acc = 0.0;
    for (float v : values) {
        const double d = static_cast<double>(v) - fake_quant_value(v, p);
        acc += d * d;
    }
    return acc;
}

VarId fake_quant(Tape& tape, VarId x, const QuantParams& p)
{
    Tensor y = fake_quant(tape.value(x), p);
    return tape.record(std::move(y), {x}, [p](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const auto g = ctx.grad_out();
        const Tensor& xin = ctx.input(0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (std::fabs(xin[i]) <= p.threshold) gx[i] += g[i];
        }
    });
}

} // namespace dqss
