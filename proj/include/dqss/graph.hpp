// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dqss/autograd.hpp"
#include "dqss/tensor.hpp"

#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dqss {

enum class LayerKind { Conv2d, Linear, BatchNorm, ReLU, MaxPool, AvgPool, Flatten };

std::string_view layer_kind_name(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);

class GraphError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct Layer {
    LayerKind kind = LayerKind::ReLU;
    std::string name;
    // conv2d / linear
    TensorPtr weight;
    TensorPtr bias;
    std::size_t stride = 1;
    std::size_t padding = 0;
    // pooling
    std::size_t kernel = 2;
    // batchnorm (frozen, never folded into the preceding layer)
    BatchNormStats bn;

    bool searchable() const noexcept { return kind == LayerKind::Conv2d || kind == LayerKind::Linear; }
};

/// Runs a searchable (conv2d / linear) layer. Quantization schemes plug in
/// here; the default hook executes the plain FP32 operator.
class LayerHook {
public:
    virtual ~LayerHook() = default;
    /// `slot` is the layer's position among the graph's searchable layers.
    virtual VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const = 0;
};

/// Applies the layer's operator (conv2d or linear) to already-prepared operands.
VarId apply_layer_op(Tape& tape, const Layer& layer, VarId input, VarId weight, std::optional<VarId> bias);
/// Tape-free evaluation of the layer's operator with a substitute weight (bias from the layer).
Tensor evaluate_layer_op(const Layer& layer, const Tensor& input, const Tensor& weight);

/// Sequential network: layer i feeds layer i + 1. Output is the logit matrix;
/// the softmax cross-entropy head is applied by the loss.
class Graph {
public:
    static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();

    Graph() = default;
    Graph(Shape sample_shape, std::size_t num_classes, std::vector<Layer> layers);

    const Shape& sample_shape() const noexcept { return sample_shape_; }
    std::size_t num_classes() const noexcept { return num_classes_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Layer>& layers() noexcept { return layers_; }

    /// Indices (into layers()) of conv2d / linear layers, in order.
    std::vector<std::size_t> searchable_layers() const;
    /// Per-sample shape entering each layer; the final entry is the output.
    std::vector<Shape> infer_shapes() const;
    /// Checks names, parameters and static shape consistency.
    void validate() const;
    std::size_t parameter_count() const;

    /// Records layers [begin, end) on the tape. With begin == 0 the input must
    /// be a batch of sample_shape().
    VarId forward(Tape& tape, VarId input, const LayerHook* hook = nullptr, std::size_t begin = 0,
                  std::size_t end = npos) const;
    /// Gradient-free convenience forward.
    Tensor predict(const Tensor& batch, const LayerHook* hook = nullptr) const;

    /// Deep copy; parameters are not shared with the original.
    Graph clone() const;
    /// Flips requires_grad on every conv/linear weight and bias.
    void set_trainable(bool on);

private:
    Shape sample_shape_;
    std::size_t num_classes_ = 0;
    std::vector<Layer> layers_;
};

/// Stacks per-sample tensors [s...] into one batch [n, s...].
Tensor stack_batch(std::span<const Tensor> samples);
Tensor stack_batch(std::span<const Tensor* const> samples);

} // namespace dqss
