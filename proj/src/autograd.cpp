// SPDX-License-Identifier: Apache-2.0
#include "dqss/autograd.hpp"

#include "dqss/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dqss {

std::span<const float> BackwardContext::grad_out() const { return tape_.nodes_[node_].grad; }
const Tensor& BackwardContext::output() const { return tape_.nodes_[node_].value; }
std::size_t BackwardContext::num_inputs() const { return tape_.nodes_[node_].inputs.size(); }

const Tensor& BackwardContext::input(std::size_t i) const
{
    return tape_.nodes_[tape_.nodes_[node_].inputs.at(i).index].value;
}

bool BackwardContext::needs_grad(std::size_t i) const
{
    return tape_.nodes_[tape_.nodes_[node_].inputs.at(i).index].requires_grad;
}

std::span<float> BackwardContext::input_grad(std::size_t i)
{
    const std::size_t idx = tape_.nodes_[node_].inputs.at(i).index;
    if (!tape_.nodes_[idx].requires_grad) return {};
    return tape_.grad_buffer(idx);
}

Tape::Tape()
{
#ifdef NDEBUG
    finite_checks_ = false;
#else
    finite_checks_ = true;
#endif
}

void Tape::ensure_live() const
{
    if (consumed_) throw StaleGraphError("tape already consumed by backward(); re-run the forward pass");
}

std::span<float> Tape::grad_buffer(std::size_t index)
{
    Node& n = nodes_[index];
    if (n.grad.empty()) n.grad.assign(n.value.numel(), 0.0f);
    return n.grad;
}

VarId Tape::push(Node node)
{
    ensure_live();
    if (finite_checks_ && !node.value.all_finite()) {
        bool inputs_finite = true;
        for (VarId v : node.inputs) inputs_finite = inputs_finite && nodes_[v.index].value.all_finite();
        if (inputs_finite) {
            throw NonFiniteError("op #" + std::to_string(nodes_.size()) + " produced non-finite output from finite inputs");
        }
    }
    nodes_.push_back(std::move(node));
    return VarId{nodes_.size() - 1};
}

VarId Tape::constant(Tensor value)
{
    Node n;
    n.value = std::move(value);
    n.value.set_requires_grad(false);
    n.value.clear_grad();
    return push(std::move(n));
}

VarId Tape::param(const TensorPtr& p)
{
    Node n;
    n.value = Tensor(p->shape(), p->storage());
    n.requires_grad = p->requires_grad();
    if (n.requires_grad) n.leaf = p;
    return push(std::move(n));
}

std::optional<std::span<const float>> Tape::grad(VarId v) const
{
    const Node& n = nodes_.at(v.index);
    if (n.grad.empty()) return std::nullopt;
    return std::span<const float>(n.grad);
}

VarId Tape::record(Tensor value, std::vector<VarId> inputs, BackwardFn backward)
{
    Node n;
    n.value = std::move(value);
    for (VarId v : inputs) n.requires_grad = n.requires_grad || nodes_.at(v.index).requires_grad;
    n.inputs = std::move(inputs);
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

VarId Tape::record(Tensor value, std::vector<VarId> inputs, BackwardFn backward, std::shared_ptr<const void> attachment)
{
    const VarId id = record(std::move(value), std::move(inputs), std::move(backward));
    nodes_[id.index].attachment = std::move(attachment);
    return id;
}

VarId Tape::conv2d(VarId x, VarId w, std::optional<VarId> bias, std::size_t stride, std::size_t pad)
{
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const auto d = kernels::conv2d_dims(xv.shape(), wv.shape(), stride, pad);
    std::span<const float> b;
    if (bias) {
        if (value(*bias).numel() != d.out_ch) {
            throw ShapeError("conv2d bias length " + std::to_string(value(*bias).numel()) +
                             " vs weight axis 0 (O=" + std::to_string(d.out_ch) + ")");
        }
        b = value(*bias).data();
    }
    Tensor y(d.output_shape());
    kernels::conv2d_forward(d, xv.data(), wv.data(), b, y.data());
    std::vector<VarId> ins{x, w};
    if (bias) ins.push_back(*bias);
    return record(std::move(y), std::move(ins), [d](BackwardContext& ctx) {
        const auto g = ctx.grad_out();
        if (auto gx = ctx.input_grad(0); !gx.empty()) kernels::conv2d_backward_input(d, g, ctx.input(1).data(), gx);
        if (auto gw = ctx.input_grad(1); !gw.empty()) kernels::conv2d_backward_weight(d, g, ctx.input(0).data(), gw);
        if (ctx.num_inputs() > 2) {
            if (auto gb = ctx.input_grad(2); !gb.empty()) kernels::conv2d_backward_bias(d, g, gb);
        }
    });
}

VarId Tape::linear(VarId x, VarId w, std::optional<VarId> bias)
{
    const Tensor& xv = value(x);
    const Tensor& wv = value(w);
    const auto d = kernels::linear_dims(xv.shape(), wv.shape());
    std::span<const float> b;
    if (bias) {
        if (value(*bias).numel() != d.out_features) {
            throw ShapeError("linear bias length " + std::to_string(value(*bias).numel()) +
                             " vs weight axis 0 (O=" + std::to_string(d.out_features) + ")");
        }
        b = value(*bias).data();
    }
    Tensor y(Shape{d.batch, d.out_features});
    kernels::linear_forward(d, xv.data(), wv.data(), b, y.data());
    std::vector<VarId> ins{x, w};
    if (bias) ins.push_back(*bias);
    return record(std::move(y), std::move(ins), [d](BackwardContext& ctx) {
        const auto g = ctx.grad_out();
        if (auto gx = ctx.input_grad(0); !gx.empty()) kernels::linear_backward_input(d, g, ctx.input(1).data(), gx);
        if (auto gw = ctx.input_grad(1); !gw.empty()) kernels::linear_backward_weight(d, g, ctx.input(0).data(), gw);
        if (ctx.num_inputs() > 2) {
            if (auto gb = ctx.input_grad(2); !gb.empty()) kernels::linear_backward_bias(d, g, gb);
        }
    });
}

VarId Tape::relu(VarId x)
{
    const Tensor& xv = value(x);
    Tensor y(xv.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
    return record(std::move(y), {x}, [](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const auto g = ctx.grad_out();
        const Tensor& xin = ctx.input(0);
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xin[i] > 0.0f) gx[i] += g[i];
        }
    });
}

VarId Tape::batchnorm(VarId x, const BatchNormStats& stats)
{
    const Tensor& xv = value(x);
    if (xv.rank() < 2) throw ShapeError("batchnorm input needs a channel axis, got " + shape_to_string(xv.shape()));
    const std::size_t batch = xv.dim(0), channels = xv.dim(1);
    const std::size_t plane = xv.numel() / std::max<std::size_t>(batch * channels, 1);
    for (const auto* t : {&stats.mean, &stats.var, &stats.gamma, &stats.beta}) {
        if ((*t)->numel() != channels) {
            throw ShapeError("batchnorm statistic length " + std::to_string((*t)->numel()) + " vs input axis 1 (C=" +
                             std::to_string(channels) + ")");
        }
    }
    Tensor y(xv.shape());
    kernels::batchnorm_forward(batch, channels, plane, xv.data(), stats.mean->data(), stats.var->data(),
                               stats.gamma->data(), stats.beta->data(), stats.eps, y.data());
    return record(std::move(y), {x}, [stats, batch, channels, plane](BackwardContext& ctx) {
        kernels::batchnorm_backward_input(batch, channels, plane, ctx.grad_out(), stats.var->data(),
                                          stats.gamma->data(), stats.eps, ctx.input_grad(0));
    });
}

VarId Tape::maxpool(VarId x, std::size_t kernel, std::size_t stride)
{
    const auto d = kernels::pool_dims(value(x).shape(), kernel, stride);
    Tensor y(d.output_shape());
    kernels::maxpool_forward(d, value(x).data(), y.data());
    return record(std::move(y), {x}, [d](BackwardContext& ctx) {
        kernels::maxpool_backward(d, ctx.input(0).data(), ctx.grad_out(), ctx.input_grad(0));
    });
}

VarId Tape::avgpool(VarId x, std::size_t kernel, std::size_t stride)
{
    const auto d = kernels::pool_dims(value(x).shape(), kernel, stride);
    Tensor y(d.output_shape());
    kernels::avgpool_forward(d, value(x).data(), y.data());
    return record(std::move(y), {x},
                  [d](BackwardContext& ctx) { kernels::avgpool_backward(d, ctx.grad_out(), ctx.input_grad(0)); });
}

VarId Tape::flatten(VarId x)
{
    const Tensor& xv = value(x);
    if (xv.rank() < 1) throw ShapeError("flatten needs a batch axis");
    const std::size_t batch = xv.dim(0);
    const std::size_t features = batch ? xv.numel() / batch : 0;
    return record(xv.reshaped({batch, features}), {x}, [](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const auto g = ctx.grad_out();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    });
}

VarId Tape::add(VarId a, VarId b)
{
    check_same_shape(value(a).shape(), value(b).shape(), "add");
    Tensor y(value(a).shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = value(a)[i] + value(b)[i];
    return record(std::move(y), {a, b}, [](BackwardContext& ctx) {
        const auto g = ctx.grad_out();
        for (std::size_t k = 0; k < 2; ++k) {
            auto gi = ctx.input_grad(k);
            for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += g[i];
        }
    });
}

VarId Tape::scale(VarId x, float factor)
{
    Tensor y(value(x).shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = value(x)[i] * factor;
    return record(std::move(y), {x}, [factor](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const auto g = ctx.grad_out();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
    });
}

VarId Tape::scale_by(VarId x, VarId s)
{
    const float factor = value(s).item();
    Tensor y(value(x).shape());
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] = value(x)[i] * factor;
    return record(std::move(y), {x, s}, [](BackwardContext& ctx) {
        const auto g = ctx.grad_out();
        const float factor = ctx.input(1).item();
        if (auto gx = ctx.input_grad(0); !gx.empty()) {
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * factor;
        }
        if (auto gs = ctx.input_grad(1); !gs.empty()) {
            const Tensor& xin = ctx.input(0);
            float acc = 0.0f;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xin[i];
            gs[0] += acc;
        }
    });
}

VarId Tape::sum(VarId x)
{
    float acc = 0.0f;
    for (float v : value(x).data()) acc += v;
    return record(Tensor::scalar(acc), {x}, [](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const float g = ctx.grad_out()[0];
        for (float& v : gx) v += g;
    });
}

VarId Tape::dot(VarId x, const Tensor& weights)
{
    check_same_shape(value(x).shape(), weights.shape(), "dot");
    float acc = 0.0f;
    for (std::size_t i = 0; i < weights.numel(); ++i) acc += value(x)[i] * weights[i];
    return record(Tensor::scalar(acc), {x}, [weights](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const float g = ctx.grad_out()[0];
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
    });
}

VarId Tape::softmax(VarId raw)
{
    const Tensor& r = value(raw);
    if (r.rank() != 1 || r.numel() == 0) throw ShapeError("softmax expects a non-empty vector, got " + shape_to_string(r.shape()));
    const float m = *std::max_element(r.data().begin(), r.data().end());
    Tensor y(r.shape());
    float z = 0.0f;
    for (std::size_t i = 0; i < r.numel(); ++i) {
        y[i] = std::exp(r[i] - m);
        z += y[i];
    }
    for (std::size_t i = 0; i < r.numel(); ++i) y[i] /= z;
    return record(std::move(y), {raw}, [](BackwardContext& ctx) {
        auto gr = ctx.input_grad(0);
        const auto g = ctx.grad_out();
        const Tensor& theta = ctx.output();
        float inner = 0.0f;
        for (std::size_t i = 0; i < g.size(); ++i) inner += g[i] * theta[i];
        for (std::size_t i = 0; i < gr.size(); ++i) gr[i] += theta[i] * (g[i] - inner);
    });
}

VarId Tape::pick(VarId vec, std::size_t i)
{
    const Tensor& v = value(vec);
    if (i >= v.numel()) throw ShapeError("pick index " + std::to_string(i) + " out of range for " + shape_to_string(v.shape()));
    return record(Tensor::scalar(v[i]), {vec}, [i](BackwardContext& ctx) { ctx.input_grad(0)[i] += ctx.grad_out()[0]; });
}

VarId Tape::weighted_sum(std::span<const VarId> branches, VarId theta)
{
    if (branches.empty()) throw ShapeError("weighted_sum needs at least one branch");
    const Tensor& th = value(theta);
    if (th.numel() != branches.size()) {
        throw ShapeError("weighted_sum: " + std::to_string(branches.size()) + " branches vs theta " +
                         shape_to_string(th.shape()));
    }
    const Shape& shape = value(branches[0]).shape();
    Tensor y(shape);
    for (std::size_t b = 0; b < branches.size(); ++b) {
        const Tensor& bv = value(branches[b]);
        check_same_shape(shape, bv.shape(), "weighted_sum branch");
        for (std::size_t i = 0; i < y.numel(); ++i) y[i] += th[b] * bv[i];
    }
    std::vector<VarId> ins(branches.begin(), branches.end());
    ins.push_back(theta);
    return record(std::move(y), std::move(ins), [](BackwardContext& ctx) {
        const std::size_t n = ctx.num_inputs() - 1;
        const auto g = ctx.grad_out();
        const Tensor& th = ctx.input(n);
        auto gth = ctx.input_grad(n);
        for (std::size_t b = 0; b < n; ++b) {
            if (auto gb = ctx.input_grad(b); !gb.empty()) {
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += th[b] * g[i];
            }
            if (!gth.empty()) {
                const Tensor& bv = ctx.input(b);
                float acc = 0.0f;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * bv[i];
                gth[b] += acc;
            }
        }
    });
}

VarId Tape::cross_entropy(VarId logits, std::span<const int> labels)
{
    const Tensor& z = value(logits);
    if (z.rank() != 2 || z.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_to_string(z.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = z.dim(0), classes = z.dim(1);
    std::vector<float> probs(z.numel());
    double total = 0.0;
    for (std::size_t n = 0; n < batch; ++n) {
        const int label = labels[n];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw ShapeError("cross_entropy: label " + std::to_string(label) + " outside [0, " + std::to_string(classes) + ")");
        }
        const float* row = z.data().data() + n * classes;
        const float m = *std::max_element(row, row + classes);
        float s = 0.0f;
        for (std::size_t k = 0; k < classes; ++k) {
            probs[n * classes + k] = std::exp(row[k] - m);
            s += probs[n * classes + k];
        }
        for (std::size_t k = 0; k < classes; ++k) probs[n * classes + k] /= s;
        total += std::log(s) + m - row[label];
    }
    const float loss = batch ? static_cast<float>(total / static_cast<double>(batch)) : 0.0f;
    std::vector<int> labs(labels.begin(), labels.end());
    return record(Tensor::scalar(loss), {logits}, [probs = std::move(probs), labs = std::move(labs), classes](BackwardContext& ctx) {
        auto gz = ctx.input_grad(0);
        const float g = ctx.grad_out()[0] / static_cast<float>(labs.size());
        for (std::size_t n = 0; n < labs.size(); ++n) {
            for (std::size_t k = 0; k < classes; ++k) {
                const float target = static_cast<std::size_t>(labs[n]) == k ? 1.0f : 0.0f;
                gz[n * classes + k] += g * (probs[n * classes + k] - target);
            }
        }
    });
}

VarId Tape::mse(VarId x, const Tensor& target)
{
    check_same_shape(value(x).shape(), target.shape(), "mse");
    const Tensor& xv = value(x);
    double acc = 0.0;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        const double d = static_cast<double>(xv[i]) - target[i];
        acc += d * d;
    }
    const float n = static_cast<float>(std::max<std::size_t>(xv.numel(), 1));
    return record(Tensor::scalar(static_cast<float>(acc / n)), {x}, [target, n](BackwardContext& ctx) {
        auto gx = ctx.input_grad(0);
        const float g = ctx.grad_out()[0] * 2.0f / n;
        const Tensor& xin = ctx.input(0);
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * (xin[i] - target[i]);
    });
}

void Tape::backward(VarId loss)
{
    ensure_live();
    Node& root = nodes_.at(loss.index);
    if (root.value.numel() != 1) throw ShapeError("backward() needs a scalar loss, got " + shape_to_string(root.value.shape()));
    consumed_ = true;
    if (!root.requires_grad) return;
    grad_buffer(loss.index)[0] = 1.0f;
    for (std::size_t i = loss.index + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty()) continue;
        if (n.leaf) {
            auto dst = n.leaf->ensure_grad();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
        } else if (n.backward) {
            BackwardContext ctx(*this, i);
            n.backward(ctx);
        }
    }
}

} // namespace dqss
