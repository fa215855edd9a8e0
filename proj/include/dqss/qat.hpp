// SPDX-License-Identifier: Apache-2.0
//
// Quantization-aware training with a strategy mixture over one shared weight.
//
// Quantizer rules (b bits, Qp = 2^(b-1) - 1, L = 2^b - 1, rounding half-even):
//   DoReFa  weight:      M * round(Qp * tanh(W) / max|tanh(W)|) / Qp,  M = max|W|
//           activation:  r * round(L * clamp(x / r, 0, 1)) / L,        r fixed at warm-up
//   PACT    weight:      a * round(Qp * clamp(W, -a, a) / a) / Qp      learnable a
//           activation:  a * round(L * clamp(x, 0, a) / a) / L         learnable a
//   LSQ     weight:      s * round(clamp(W / s, -Qp, Qp))              learnable s
//           activation:  s * round(clamp(x / s, 0, L))                 learnable s
// Gradients use the straight-through estimator inside the clip range.
// PACT: d/da = 1 (activation) or sign(W) (weight) where clipped, else 0.
// LSQ:  d/ds = (-v/s + round(v/s)) inside, clip bound outside, scaled by
//       1 / sqrt(count * bound), count = per-sample feature count.
// DoReFa treats max|tanh(W)| and max|W| as constants.
#pragma once

#include "dqss/autograd.hpp"
#include "dqss/calibrators.hpp"
#include "dqss/graph.hpp"
#include "dqss/model_io.hpp"
#include "dqss/search.hpp"
#include "dqss/search_io.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dqss {

enum class QatStrategy { DoReFa = 0, PACT = 1, LSQ = 2 };

std::string_view qat_strategy_name(QatStrategy s);
std::optional<QatStrategy> parse_qat_strategy(std::string_view name);
std::vector<QatStrategy> default_qat_pool();

constexpr float kMinLearnableScalar = 1e-6f;

class QatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class QatDivergedError : public QatError {
public:
    using QatError::QatError;
};

/// LSQ gradient-scaling factor 1 / sqrt(count * bound).
float lsq_grad_scale(std::size_t count, std::int32_t bound);

/// Fake-quantizes x with the given rule. `scalar` is the learnable clip (PACT),
/// step (LSQ) or the fixed activation range (DoReFa); unused by DoReFa
/// weights. `count` is the LSQ feature count (0 = numel / leading dim).
VarId qat_quantize(Tape& tape, VarId x, QatStrategy s, QuantTarget target, int bits, std::optional<VarId> scalar,
                   std::size_t count = 0);
Tensor qat_quantize(const Tensor& x, QatStrategy s, QuantTarget target, int bits, float scalar);

/// One branch quantizer with its (possibly learnable) scalar.
class QatQuantizer {
public:
    QatQuantizer(QatStrategy strategy, QuantTarget target, int bits);

    QatStrategy strategy() const noexcept { return strategy_; }
    QuantTarget target() const noexcept { return target_; }
    int bits() const noexcept { return bits_; }
    bool learnable() const noexcept { return strategy_ != QatStrategy::DoReFa; }
    bool uses_scalar() const noexcept { return learnable() || target_ == QuantTarget::Activation; }
    bool initialized() const noexcept { return initialized_; }
    const TensorPtr& scalar() const noexcept { return scalar_; }
    float value() const { return scalar_->item(); }

    /// Sets the scalar from an observed max |x|.
    void initialize(float observed_max);
    void restore(float value, bool initialized);
    /// Clamps the scalar to kMinLearnableScalar; true if it was changed.
    bool project();

    VarId apply(Tape& tape, VarId x) const;

private:
    QatStrategy strategy_;
    QuantTarget target_;
    int bits_;
    TensorPtr scalar_;
    bool initialized_ = false;
};

/// Mixture state of one conv/linear layer.
struct SharedWeightMixture {
    std::string name;
    /// The universal weight tensor, shared by every weight branch.
    TensorPtr weight;
    std::vector<QatQuantizer> activation;
    std::vector<QatQuantizer> weight_quantizers;
    TensorPtr alpha;
    TensorPtr beta;
    /// Warm-up EMA of max |input|.
    float observed_input_max = 0.0f;
    bool observed = false;

    /// Distinct weight tensors referenced by the layer's branches.
    std::size_t weight_storage_count() const;
};

/// Â = Σ θa_i q_i(A), Ŵ = Σ θb_j q_j(W), y = op(Ŵ, Â).
VarId shared_mixture_forward(Tape& tape, const Layer& layer, const SharedWeightMixture& m, VarId input,
                             VarId theta_a, VarId theta_b);

class QatModel final : public LayerHook {
public:
    /// Deep-copies `graph`; weights and biases become trainable.
    QatModel(const Graph& graph, std::vector<QatStrategy> pool, int bits);

    Graph& graph() noexcept { return graph_; }
    const Graph& graph() const noexcept { return graph_; }
    const std::vector<QatStrategy>& pool() const noexcept { return pool_; }
    int bits() const noexcept { return bits_; }
    std::vector<SharedWeightMixture>& layers() noexcept { return layers_; }
    const std::vector<SharedWeightMixture>& layers() const noexcept { return layers_; }
    std::vector<std::string> layer_names() const;
    std::vector<std::string> pool_names() const;

    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override;
    /// Records the mixture forward; counts one forward pass.
    VarId forward(Tape& tape, VarId input) const;
    Tensor predict(const Tensor& batch) const;
    std::size_t forward_passes() const noexcept { return forward_passes_; }

    /// All learnable tensors in each group.
    std::vector<TensorPtr> weight_params() const;
    std::vector<TensorPtr> theta_params() const;
    std::vector<TensorPtr> quantizer_params() const;

    ThetaSnapshot snapshot(std::size_t epoch) const;
    double mean_theta_entropy() const;
    NamedAssignment finalize() const;
    /// Forward with each layer using only its chosen strategies.
    Tensor predict_finalized(const Tensor& batch, const NamedAssignment& assignment) const;

private:
    Graph graph_;
    std::vector<QatStrategy> pool_;
    int bits_;
    std::vector<SharedWeightMixture> layers_;
    mutable std::size_t forward_passes_ = 0;
};

struct QatConfig {
    /// Total epochs including the single warm-up epoch.
    std::size_t epochs = 50;
    double lr_weight = 1e-3;
    /// Learning rate of θ and of the learnable quantizer scalars.
    double lr_theta = 1e-4;
    std::vector<std::size_t> decay_epochs;
    double decay_factor = 0.1;
    std::size_t batch_size = 32;
    float ema_momentum = 0.9f;
    double divergence_factor = 1e3;
    std::uint64_t seed = 42;
    std::function<void(const std::string&)> on_warning;
};

struct PassCounters {
    std::size_t observe_passes = 0;
    std::size_t steps = 0;
    std::size_t forwards = 0;
    std::size_t backwards = 0;
};

struct QatTrace {
    std::vector<ThetaSnapshot> snapshots;
    std::vector<EpochReport> epochs;
    PassCounters counters;
};

/// Runs epochs [first_epoch, cfg.epochs]. Epoch 1 is the warm-up: forward
/// passes only, feeding the EMA that initializes every quantizer. Later
/// epochs take one SGD step per mini-batch, each from exactly one forward
/// and one backward pass.
QatTrace qat_train(QatModel& model, const CalibrationSet& train, const QatConfig& cfg, std::size_t first_epoch = 1,
                   const EpochCallback& on_epoch = {});

/// Checkpoint = model manifest + blobs + qat_state.json in `dir`.
void save_qat_checkpoint(const QatModel& model, std::size_t epochs_completed, const fs::path& dir);
struct QatCheckpoint {
    QatModel model;
    std::size_t epochs_completed = 0;
};
QatCheckpoint load_qat_checkpoint(const fs::path& dir);

std::string serialize_qat_state(const QatModel& model, std::size_t epochs_completed);
/// Applies a state document to a model built with the same graph; returns epochs completed.
std::size_t apply_qat_state(QatModel& model, const std::string& text, const std::string& source);

// ---------------------------------------------------------------- FP32 training

struct FloatTrainConfig {
    std::size_t epochs = 50;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::uint64_t seed = 42;
};

/// Plain SGD on cross-entropy; returns the mean loss of each epoch.
std::vector<double> train_float(Graph& graph, const CalibrationSet& train, const FloatTrainConfig& cfg);

} // namespace dqss
