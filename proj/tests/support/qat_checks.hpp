// SPDX-License-Identifier: Apache-2.0
//
// QAT contract checks shared by the unit and acceptance tests.
#pragma once

#include "dqss/qat.hpp"

#include "support/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace dqss::testing {

/// Mixture forward in which every weight branch quantizes its own copy of W.
class SplitWeightHook final : public LayerHook {
public:
    explicit SplitWeightHook(const QatModel& model) : model_(model)
    {
        for (const auto& m : model.layers()) {
            std::vector<TensorPtr> copies;
            for (std::size_t j = 0; j < m.weight_quantizers.size(); ++j) {
                copies.push_back(make_param(*m.weight, true));
                copies.back()->clear_grad();
            }
            copies_.push_back(std::move(copies));
        }
    }

    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override
    {
        const auto& m = model_.layers().at(slot);
        std::vector<VarId> abr, wbr;
        for (const auto& q : m.activation) abr.push_back(q.apply(tape, input));
        for (std::size_t j = 0; j < m.weight_quantizers.size(); ++j) {
            wbr.push_back(m.weight_quantizers[j].apply(tape, tape.param(copies_[slot][j])));
        }
        const VarId a_hat = tape.weighted_sum(abr, tape.softmax(tape.param(m.alpha)));
        const VarId w_hat = tape.weighted_sum(wbr, tape.softmax(tape.param(m.beta)));
        std::optional<VarId> b;
        if (layer.bias) b = tape.param(layer.bias);
        return apply_layer_op(tape, layer, a_hat, w_hat, b);
    }

    /// Sum over branches of the copies' gradients for one layer.
    std::vector<double> accumulated(std::size_t slot) const
    {
        std::vector<double> g(copies_[slot][0]->numel(), 0.0);
        for (const auto& c : copies_[slot]) {
            const auto cg = c->grad();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += cg[i];
        }
        return g;
    }

private:
    const QatModel& model_;
    std::vector<std::vector<TensorPtr>> copies_;
};

/// Worst relative (inf-norm) gap over layers between the shared weight's
/// gradient and the accumulated per-branch copy gradients.
inline double gradient_identity_error(const QatModel& model, const Tensor& batch, const std::vector<int>& labels)
{
    for (const auto& m : model.layers()) m.weight->zero_grad();
    {
        Tape tape;
        tape.backward(tape.cross_entropy(model.graph().forward(tape, tape.constant(batch), &model), labels));
    }
    std::vector<std::vector<double>> shared;
    for (const auto& m : model.layers()) shared.push_back(to_double(m.weight->grad()));

    const SplitWeightHook split(model);
    {
        Tape tape;
        tape.backward(tape.cross_entropy(model.graph().forward(tape, tape.constant(batch), &split), labels));
    }
    double worst = 0.0;
    for (std::size_t l = 0; l < shared.size(); ++l) {
        worst = std::max(worst, relative_inf_error(shared[l], split.accumulated(l)));
    }
    return worst;
}

/// Number of learnable tensors in the model with the shape of layer `slot`'s weight.
inline std::size_t weight_shaped_tensors(const QatModel& model, std::size_t slot)
{
    const Shape& s = model.layers().at(slot).weight->shape();
    std::size_t count = 0;
    for (const auto& p : model.weight_params()) count += p->shape() == s;
    for (const auto& p : model.theta_params()) count += p->shape() == s;
    for (const auto& p : model.quantizer_params()) count += p->shape() == s;
    return count;
}

inline std::size_t learnable_numel(const QatModel& model)
{
    std::size_t n = 0;
    for (const auto& p : model.weight_params()) n += p->numel();
    for (const auto& p : model.theta_params()) n += p->numel();
    for (const auto& p : model.quantizer_params()) n += p->numel();
    return n;
}

} // namespace dqss::testing
