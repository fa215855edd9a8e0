// SPDX-License-Identifier: Apache-2.0
#include "dqss/mixture.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <memory>
#include <string>

namespace dqss {

namespace {

std::atomic<std::size_t> g_live{0};
std::atomic<std::size_t> g_peak{0};

constexpr std::ptrdiff_t kParallelThreshold = 1 << 15;

void check_theta(std::span<const float> theta, std::size_t branches)
{
    if (branches == 0) throw QuantError("mixture needs at least one branch");
    if (theta.size() != branches) {
        throw ShapeError("theta has " + std::to_string(theta.size()) + " entries for " + std::to_string(branches) +
                         " branches");
    }
}

/// fake_quant recorded with a lease that lives as long as the tape node.
VarId leased_fake_quant(Tape& tape, VarId x, const QuantParams& p)
{
    auto lease = std::make_shared<BranchLease>();
    const Tensor& in = tape.value(x);
    Tensor out(in.shape());
    fake_quant_into(in.data(), out.data(), p);
    return tape.record(std::move(out), {x}, [p](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        if (gx.empty()) return;
        const auto g = ctx.grad_out();
        const Tensor& xv = ctx.input(0);
        for (std::size_t e = 0; e < gx.size(); ++e) {
            if (std::fabs(xv[e]) <= p.threshold) gx[e] += g[e];
        }
    }, std::move(lease));
}

} // namespace

std::vector<float> softmax_theta(std::span<const float> raw)
{
    if (raw.empty()) throw ShapeError("softmax of an empty vector");
    const float m = *std::max_element(raw.begin(), raw.end());
    std::vector<float> y(raw.size());
    float z = 0.0f;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        y[i] = std::exp(raw[i] - m);
        z += y[i];
    }
    for (float& v : y) v /= z;
    return y;
}

BranchTensorStats branch_tensor_stats()
{
    return {g_live.load(), g_peak.load()};
}

void reset_branch_tensor_peak()
{
    g_peak.store(g_live.load());
}

BranchLease::BranchLease()
{
    const std::size_t now = g_live.fetch_add(1) + 1;
    std::size_t peak = g_peak.load();
    while (now > peak && !g_peak.compare_exchange_weak(peak, now)) {
    }
}

BranchLease::~BranchLease()
{
    g_live.fetch_sub(1);
}

VarId mix_fake_quant(Tape& tape, VarId x, VarId theta, std::span<const QuantParams> branches)
{
    const Tensor& in = tape.value(x);
    const Tensor& th = tape.value(theta);
    check_theta(th.data(), branches.size());

    std::vector<QuantParams> ps(branches.begin(), branches.end());
    auto lease = std::make_shared<BranchLease>();
    Tensor out(in.shape());
    {
        const float* xs = in.data().data();
        const float* t = th.data().data();
        float* ys = out.data().data();
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(in.numel());
        const std::size_t nb = ps.size();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
        for (std::ptrdiff_t e = 0; e < n; ++e) {
            float acc = 0.0f;
            for (std::size_t b = 0; b < nb; ++b) acc += t[b] * fake_quant_value(xs[e], ps[b]);
            ys[e] = acc;
        }
    }

    return tape.record(std::move(out), {x, theta}, [ps = std::move(ps)](BackwardContext& ctx) {
        const auto g = ctx.grad_out();
        const Tensor& xv = ctx.input(0);
        const Tensor& t = ctx.input(1);
        const std::size_t nb = ps.size();
        const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(xv.numel());

        auto gx = ctx.input_grad(0);
        if (!gx.empty()) {
            float* gxs = gx.data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
            for (std::ptrdiff_t e = 0; e < n; ++e) {
                const float a = std::fabs(xv[static_cast<std::size_t>(e)]);
                float w = 0.0f;
                for (std::size_t b = 0; b < nb; ++b) {
                    if (a <= ps[b].threshold) w += t[b];
                }
                gxs[e] += w * g[static_cast<std::size_t>(e)];
            }
        }

        auto gt = ctx.input_grad(1);
        if (!gt.empty()) {
            for (std::size_t b = 0; b < nb; ++b) {
                double acc = 0.0;
                for (std::ptrdiff_t e = 0; e < n; ++e) {
                    const auto i = static_cast<std::size_t>(e);
                    acc += static_cast<double>(fake_quant_value(xv[i], ps[b])) * g[i];
                }
                gt[b] += static_cast<float>(acc);
            }
        }
    }, std::move(lease));
}

Tensor mix_fake_quant(const Tensor& x, std::span<const float> theta, std::span<const QuantParams> branches)
{
    Tape tape;
    const VarId xv = tape.constant(x);
    const VarId tv = tape.constant(Tensor(Shape{theta.size()}, std::vector<float>(theta.begin(), theta.end())));
    return tape.value(mix_fake_quant(tape, xv, tv, branches));
}

void MixtureLayer::validate() const
{
    if (!layer.searchable()) throw GraphError("layer '" + layer.name + "' is not a conv2d/linear layer");
    if (!layer.weight) throw GraphError("layer '" + layer.name + "' has no weight");
    if (activation.empty() || activation.size() != weight.size()) {
        throw QuantError("layer '" + layer.name + "': activation and weight branch counts differ or are zero");
    }
    for (const auto& p : activation) p.validate();
    for (const auto& p : weight) p.validate();
}

VarId mixture_forward(Tape& tape, const MixtureLayer& m, VarId input, VarId theta_a, VarId theta_b, MixtureMode mode)
{
    const VarId w = tape.constant(*m.layer.weight);
    std::optional<VarId> b;
    if (m.layer.bias) b = tape.constant(*m.layer.bias);

    if (mode == MixtureMode::Efficient) {
        const VarId a_hat = mix_fake_quant(tape, input, theta_a, m.activation);
        const VarId w_hat = mix_fake_quant(tape, w, theta_b, m.weight);
        return apply_layer_op(tape, m.layer, a_hat, w_hat, b);
    }

    const std::size_t n = m.branches();
    check_theta(tape.value(theta_a).data(), n);
    check_theta(tape.value(theta_b).data(), n);
    std::vector<VarId> as, ws;
    for (std::size_t i = 0; i < n; ++i) as.push_back(leased_fake_quant(tape, input, m.activation[i]));
    for (std::size_t j = 0; j < n; ++j) ws.push_back(leased_fake_quant(tape, w, m.weight[j]));
    std::optional<VarId> y;
    for (std::size_t i = 0; i < n; ++i) {
        const VarId ta = tape.pick(theta_a, i);
        for (std::size_t j = 0; j < n; ++j) {
            const VarId yij = apply_layer_op(tape, m.layer, as[i], ws[j], b);
            const VarId term = tape.scale_by(tape.scale_by(yij, ta), tape.pick(theta_b, j));
            y = y ? tape.add(*y, term) : term;
        }
    }
    return *y;
}

namespace {

Tensor run_tape_free(const MixtureLayer& m, const Tensor& input, std::span<const float> theta_a,
                     std::span<const float> theta_b, MixtureMode mode)
{
    Tape tape;
    const VarId x = tape.constant(input);
    const VarId ta = tape.constant(Tensor(Shape{theta_a.size()}, std::vector<float>(theta_a.begin(), theta_a.end())));
    const VarId tb = tape.constant(Tensor(Shape{theta_b.size()}, std::vector<float>(theta_b.begin(), theta_b.end())));
    return tape.value(mixture_forward(tape, m, x, ta, tb, mode));
}

} // namespace

Tensor mixture_forward_efficient(const MixtureLayer& m, const Tensor& input, std::span<const float> theta_a,
                                 std::span<const float> theta_b)
{
    return run_tape_free(m, input, theta_a, theta_b, MixtureMode::Efficient);
}

Tensor mixture_forward_naive(const MixtureLayer& m, const Tensor& input, std::span<const float> theta_a,
                             std::span<const float> theta_b)
{
    return run_tape_free(m, input, theta_a, theta_b, MixtureMode::Naive);
}

} // namespace dqss
