// SPDX-License-Identifier: Apache-2.0
//
// Softmax-relaxed mixtures of quantized branches for one conv/linear layer.
//
//   efficient:  y = op(sum_j tb_j * fq(W, pw_j), sum_i ta_i * fq(A, pa_i))   1 op
//   naive:      y = sum_i sum_j ta_i * tb_j * op(fq(W, pw_j), fq(A, pa_i))   N^2 ops
//
// Both are equal by bilinearity of the operator (bias included, since the
// coefficients sum to one). The naive form exists as a test oracle.
#pragma once

#include "dqss/autograd.hpp"
#include "dqss/graph.hpp"
#include "dqss/quantizer.hpp"
#include "dqss/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace dqss {

/// exp(raw_i - max) / sum_k exp(raw_k - max).
std::vector<float> softmax_theta(std::span<const float> raw);

// Accounting of full-size (input- or weight-sized) tensors materialized by
// mixture layers. Each such tensor holds a lease for as long as it is alive.
struct BranchTensorStats {
    std::size_t live = 0;
    std::size_t peak = 0;
};
BranchTensorStats branch_tensor_stats();
/// Resets the peak to the current live count.
void reset_branch_tensor_peak();

class BranchLease {
public:
    BranchLease();
    ~BranchLease();
    BranchLease(const BranchLease&) = delete;
    BranchLease& operator=(const BranchLease&) = delete;
};

/// sum_i theta[i] * fake_quant(x, branches[i]), fused elementwise so no
/// per-branch tensor is ever stored. Backward: d/dx uses the clipped STE of
/// each branch weighted by theta; d/dtheta_i = <fake_quant(x, branches[i]), g>.
VarId mix_fake_quant(Tape& tape, VarId x, VarId theta, std::span<const QuantParams> branches);
Tensor mix_fake_quant(const Tensor& x, std::span<const float> theta, std::span<const QuantParams> branches);

struct MixtureLayer {
    Layer layer;
    /// One entry per pool strategy, in pool order.
    std::vector<QuantParams> activation;
    std::vector<QuantParams> weight;

    std::size_t branches() const noexcept { return activation.size(); }
    void validate() const;
};

enum class MixtureMode { Efficient, Naive };

/// theta_a / theta_b are 1-D normalized importance vectors on the tape.
/// Weights and bias enter as constants.
VarId mixture_forward(Tape& tape, const MixtureLayer& m, VarId input, VarId theta_a, VarId theta_b, MixtureMode mode);

Tensor mixture_forward_efficient(const MixtureLayer& m, const Tensor& input, std::span<const float> theta_a,
                                 std::span<const float> theta_b);
Tensor mixture_forward_naive(const MixtureLayer& m, const Tensor& input, std::span<const float> theta_a,
                             std::span<const float> theta_b);

} // namespace dqss
