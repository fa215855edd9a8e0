// SPDX-License-Identifier: Apache-2.0
#include "dqss/graph.hpp"

#include "dqss/kernels.hpp"

#include <set>

namespace dqss {

namespace {

constexpr std::pair<LayerKind, std::string_view> kKindNames[] = {
    {LayerKind::Conv2d, "conv2d"},   {LayerKind::Linear, "linear"},   {LayerKind::BatchNorm, "batchnorm"},
    {LayerKind::ReLU, "relu"},       {LayerKind::MaxPool, "maxpool"}, {LayerKind::AvgPool, "avgpool"},
    {LayerKind::Flatten, "flatten"},
};

Shape with_batch(const Shape& sample, std::size_t batch)
{
    Shape s{batch};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

TensorPtr clone_ptr(const TensorPtr& p)
{
    if (!p) return nullptr;
    auto c = std::make_shared<Tensor>(p->shape(), p->storage());
    c->set_requires_grad(p->requires_grad());
    return c;
}

} // namespace

std::string_view layer_kind_name(LayerKind kind)
{
    for (const auto& [k, name] : kKindNames) {
        if (k == kind) return name;
    }
    throw GraphError("unknown layer kind");
}

std::optional<LayerKind> parse_layer_kind(std::string_view name)
{
    for (const auto& [k, n] : kKindNames) {
        if (n == name) return k;
    }
    return std::nullopt;
}

VarId apply_layer_op(Tape& tape, const Layer& layer, VarId input, VarId weight, std::optional<VarId> bias)
{
    switch (layer.kind) {
    case LayerKind::Conv2d:
        return tape.conv2d(input, weight, bias, layer.stride, layer.padding);
    case LayerKind::Linear:
        return tape.linear(input, weight, bias);
    default:
        throw GraphError("layer '" + layer.name + "' has no weighted operator");
    }
}

Tensor evaluate_layer_op(const Layer& layer, const Tensor& input, const Tensor& weight)
{
    const std::span<const float> bias = layer.bias ? layer.bias->data() : std::span<const float>{};
    switch (layer.kind) {
    case LayerKind::Conv2d: {
        const auto d = kernels::conv2d_dims(input.shape(), weight.shape(), layer.stride, layer.padding);
        Tensor y(d.output_shape());
        kernels::conv2d_forward(d, input.data(), weight.data(), bias, y.data());
        return y;
    }
    case LayerKind::Linear: {
        const auto d = kernels::linear_dims(input.shape(), weight.shape());
        Tensor y(Shape{d.batch, d.out_features});
        kernels::linear_forward(d, input.data(), weight.data(), bias, y.data());
        return y;
    }
    default:
        throw GraphError("layer '" + layer.name + "' has no weighted operator");
    }
}

Graph::Graph(Shape sample_shape, std::size_t num_classes, std::vector<Layer> layers)
    : sample_shape_(std::move(sample_shape)), num_classes_(num_classes), layers_(std::move(layers))
{
}

std::vector<std::size_t> Graph::searchable_layers() const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (layers_[i].searchable()) out.push_back(i);
    }
    return out;
}

std::vector<Shape> Graph::infer_shapes() const
{
    std::vector<Shape> shapes{sample_shape_};
    for (const Layer& l : layers_) {
        const Shape in = with_batch(shapes.back(), 1);
        Shape out;
        switch (l.kind) {
        case LayerKind::Conv2d: {
            if (!l.weight) throw GraphError("conv2d layer '" + l.name + "' has no weight");
            const auto d = kernels::conv2d_dims(in, l.weight->shape(), l.stride, l.padding);
            if (l.bias && l.bias->numel() != d.out_ch) throw ShapeError("layer '" + l.name + "': bias length vs weight axis 0");
            out = d.output_shape();
            break;
        }
        case LayerKind::Linear: {
            if (!l.weight) throw GraphError("linear layer '" + l.name + "' has no weight");
            const auto d = kernels::linear_dims(in, l.weight->shape());
            if (l.bias && l.bias->numel() != d.out_features) throw ShapeError("layer '" + l.name + "': bias length vs weight axis 0");
            out = {1, d.out_features};
            break;
        }
        case LayerKind::BatchNorm: {
            if (in.size() < 2) throw ShapeError("layer '" + l.name + "': batchnorm input needs a channel axis");
            for (const auto* t : {&l.bn.mean, &l.bn.var, &l.bn.gamma, &l.bn.beta}) {
                if (!*t || (*t)->numel() != in[1]) {
                    throw ShapeError("layer '" + l.name + "': batchnorm statistics must match input axis 1 (C=" +
                                     std::to_string(in[1]) + ")");
                }
            }
            out = in;
            break;
        }
        case LayerKind::ReLU:
            out = in;
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            out = kernels::pool_dims(in, l.kernel, l.stride).output_shape();
            break;
        case LayerKind::Flatten:
            out = {1, shape_numel(in)};
            break;
        default:
            throw GraphError("layer '" + l.name + "' has unknown kind");
        }
        shapes.emplace_back(out.begin() + 1, out.end());
    }
    return shapes;
}

void Graph::validate() const
{
    std::set<std::string> names;
    for (const Layer& l : layers_) {
        if (l.name.empty()) throw GraphError("layer with empty name");
        if (!names.insert(l.name).second) throw GraphError("duplicate layer name '" + l.name + "'");
    }
    const auto shapes = infer_shapes();
    const Shape& out = shapes.back();
    if (num_classes_ > 0 && (out.size() != 1 || out[0] != num_classes_)) {
        throw ShapeError("graph output " + shape_to_string(out) + " does not match " + std::to_string(num_classes_) +
                         " classes");
    }
}

std::size_t Graph::parameter_count() const
{
    std::size_t n = 0;
    for (const Layer& l : layers_) {
        if (l.weight) n += l.weight->numel();
        if (l.bias) n += l.bias->numel();
    }
    return n;
}

VarId Graph::forward(Tape& tape, VarId input, const LayerHook* hook, std::size_t begin, std::size_t end) const
{
    end = std::min(end, layers_.size());
    if (begin == 0) {
        const Shape& s = tape.value(input).shape();
        if (s.size() != sample_shape_.size() + 1 || !std::equal(sample_shape_.begin(), sample_shape_.end(), s.begin() + 1)) {
            throw ShapeError("graph input " + shape_to_string(s) + " does not match declared sample shape " +
                             shape_to_string(sample_shape_));
        }
    }
    std::size_t slot = 0;
    for (std::size_t i = 0; i < begin; ++i) slot += layers_[i].searchable() ? 1 : 0;

    VarId x = input;
    for (std::size_t i = begin; i < end; ++i) {
        const Layer& l = layers_[i];
        switch (l.kind) {
        case LayerKind::Conv2d:
        case LayerKind::Linear:
            if (hook) {
                x = hook->run(tape, l, slot, x);
            } else {
                const VarId w = tape.param(l.weight);
                std::optional<VarId> b;
                if (l.bias) b = tape.param(l.bias);
                x = apply_layer_op(tape, l, x, w, b);
            }
            ++slot;
            break;
        case LayerKind::BatchNorm:
            x = tape.batchnorm(x, l.bn);
            break;
        case LayerKind::ReLU:
            x = tape.relu(x);
            break;
        case LayerKind::MaxPool:
            x = tape.maxpool(x, l.kernel, l.stride);
            break;
        case LayerKind::AvgPool:
            x = tape.avgpool(x, l.kernel, l.stride);
            break;
        case LayerKind::Flatten:
            x = tape.flatten(x);
            break;
        default:
            throw GraphError("layer '" + l.name + "' has unknown kind");
        }
    }
    return x;
}

Tensor Graph::predict(const Tensor& batch, const LayerHook* hook) const
{
    Tape tape;
    const VarId out = forward(tape, tape.constant(batch), hook);
    return tape.value(out);
}

Graph Graph::clone() const
{
    Graph g = *this;
    for (Layer& l : g.layers_) {
        l.weight = clone_ptr(l.weight);
        l.bias = clone_ptr(l.bias);
        l.bn.mean = clone_ptr(l.bn.mean);
        l.bn.var = clone_ptr(l.bn.var);
        l.bn.gamma = clone_ptr(l.bn.gamma);
        l.bn.beta = clone_ptr(l.bn.beta);
    }
    return g;
}

void Graph::set_trainable(bool on)
{
    for (Layer& l : layers_) {
        if (l.weight) l.weight->set_requires_grad(on);
        if (l.bias) l.bias->set_requires_grad(on);
    }
}

Tensor stack_batch(std::span<const Tensor* const> samples)
{
    if (samples.empty()) throw ShapeError("cannot stack an empty batch");
    const Shape& s = samples[0]->shape();
    Tensor out(with_batch(s, samples.size()));
    const std::size_t n = samples[0]->numel();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        check_same_shape(s, samples[i]->shape(), "stack_batch");
        std::copy(samples[i]->data().begin(), samples[i]->data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

Tensor stack_batch(std::span<const Tensor> samples)
{
    std::vector<const Tensor*> ptrs;
    ptrs.reserve(samples.size());
    for (const Tensor& t : samples) ptrs.push_back(&t);
    return stack_batch(std::span<const Tensor* const>(ptrs));
}

} // namespace dqss
