// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dqss/tensor.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace dqss {

/// Handle to a value recorded on a Tape.
struct VarId {
    std::size_t index = 0;
    friend bool operator==(VarId, VarId) = default;
};

class StaleGraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class NonFiniteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Tape;

/// View handed to a node's backward rule.
class BackwardContext {
public:
    BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}

    std::span<const float> grad_out() const;
    const Tensor& output() const;
    const Tensor& input(std::size_t i) const;
    std::size_t num_inputs() const;
    bool needs_grad(std::size_t i) const;
    /// Gradient buffer of input i (zero-initialized on first use); empty when
    /// that input does not require a gradient.
    std::span<float> input_grad(std::size_t i);

private:
    Tape& tape_;
    std::size_t node_;
};

using BackwardFn = std::function<void(BackwardContext&)>;

/// Frozen inference-mode batchnorm statistics.
struct BatchNormStats {
    TensorPtr mean, var, gamma, beta;
    float eps = 1e-5f;
};

/// Single-use reverse-mode tape. Record a forward pass, call backward() once;
/// a second backward() without a fresh tape raises StaleGraphError.
///
/// Parameter leaves created from a TensorPtr with requires_grad set receive
/// their gradient in that tensor's grad slot; constants never get one.
class Tape {
public:
    Tape();

    VarId constant(Tensor value);
    VarId param(const TensorPtr& p);

    const Tensor& value(VarId v) const { return nodes_.at(v.index).value; }
    bool requires_grad(VarId v) const { return nodes_.at(v.index).requires_grad; }
    /// Gradient of the loss w.r.t. an intermediate value, after backward().
    std::optional<std::span<const float>> grad(VarId v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Extension point: records an op whose value was computed by the caller.
    VarId record(Tensor value, std::vector<VarId> inputs, BackwardFn backward);
    /// As above; `attachment` lives as long as the node, gradient or not.
    VarId record(Tensor value, std::vector<VarId> inputs, BackwardFn backward, std::shared_ptr<const void> attachment);

    VarId conv2d(VarId x, VarId w, std::optional<VarId> bias, std::size_t stride, std::size_t pad);
    VarId linear(VarId x, VarId w, std::optional<VarId> bias);
    VarId relu(VarId x);
    VarId batchnorm(VarId x, const BatchNormStats& stats);
    VarId maxpool(VarId x, std::size_t kernel, std::size_t stride);
    VarId avgpool(VarId x, std::size_t kernel, std::size_t stride);
    VarId flatten(VarId x);
    VarId add(VarId a, VarId b);
    VarId scale(VarId x, float factor);
    /// x * s for a scalar-valued variable s.
    VarId scale_by(VarId x, VarId s);
    VarId sum(VarId x);
    /// sum(x * weights) for a constant weight tensor of the same shape.
    VarId dot(VarId x, const Tensor& weights);
    /// Softmax over a 1-D vector, max-subtracted.
    VarId softmax(VarId raw);
    /// Scalar element i of a 1-D vector.
    VarId pick(VarId vec, std::size_t i);
    /// sum_i theta[i] * branches[i]; theta is 1-D with one entry per branch.
    VarId weighted_sum(std::span<const VarId> branches, VarId theta);
    /// Mean softmax cross-entropy of [N, K] logits against labels.
    VarId cross_entropy(VarId logits, std::span<const int> labels);
    /// Mean squared error against a constant target.
    VarId mse(VarId x, const Tensor& target);

    void backward(VarId loss);
    bool consumed() const noexcept { return consumed_; }

    /// Debug builds verify every op maps finite inputs to finite outputs.
    void set_finite_checks(bool on) { finite_checks_ = on; }

private:
    friend class BackwardContext;

    struct Node {
        Tensor value;
        std::vector<VarId> inputs;
        BackwardFn backward;
        TensorPtr leaf;
        std::shared_ptr<const void> attachment;
        bool requires_grad = false;
        std::vector<float> grad;
    };

    VarId push(Node node);
    void ensure_live() const;
    std::span<float> grad_buffer(std::size_t index);

    std::vector<Node> nodes_;
    bool consumed_ = false;
    bool finite_checks_;
};

} // namespace dqss
