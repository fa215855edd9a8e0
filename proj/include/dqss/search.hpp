// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dqss/calibrators.hpp"
#include "dqss/graph.hpp"
#include "dqss/mixture.hpp"
#include "dqss/model_io.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace dqss {

constexpr float kInitialImportance = 0.1f;

class SearchError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Loss became non-finite during search; the message carries epoch, batch
/// and the θ values of every layer.
class SearchDivergedError : public SearchError {
public:
    using SearchError::SearchError;
};

/// Raw importance parameters α (activations) and β (weights) of every
/// searchable layer, stored as trainable 1-D tensors.
class ThetaState {
public:
    ThetaState() = default;
    ThetaState(std::vector<CalibratorKind> pool, std::vector<std::string> layers, float init = kInitialImportance);

    const std::vector<CalibratorKind>& pool() const noexcept { return pool_; }
    const std::vector<std::string>& layers() const noexcept { return layers_; }
    std::size_t num_layers() const noexcept { return layers_.size(); }
    std::size_t parameter_count() const noexcept { return 2 * layers_.size() * pool_.size(); }

    const TensorPtr& alpha(std::size_t layer) const { return alpha_.at(layer); }
    const TensorPtr& beta(std::size_t layer) const { return beta_.at(layer); }
    std::vector<float> theta_alpha(std::size_t layer) const;
    std::vector<float> theta_beta(std::size_t layer) const;

    /// Mean Shannon entropy (nats) over all 2·L importance distributions.
    double mean_entropy() const;
    void zero_grad();
    /// Deep copy of the raw parameters.
    ThetaState clone() const;

private:
    std::vector<CalibratorKind> pool_;
    std::vector<std::string> layers_;
    std::vector<TensorPtr> alpha_;
    std::vector<TensorPtr> beta_;
};

/// FP32 graph whose conv2d/linear layers run as mixtures over the pool.
/// Weights are frozen; only θ receives gradients.
class SearchModel final : public LayerHook {
public:
    SearchModel(Graph graph, std::vector<MixtureLayer> mixtures, ThetaState theta);

    const Graph& graph() const noexcept { return graph_; }
    const std::vector<MixtureLayer>& mixtures() const noexcept { return mixtures_; }
    ThetaState& theta() noexcept { return theta_; }
    const ThetaState& theta() const noexcept { return theta_; }

    MixtureMode mode() const noexcept { return mode_; }
    void set_mode(MixtureMode mode) noexcept { mode_ = mode; }

    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override;
    VarId forward(Tape& tape, VarId input) const { return graph_.forward(tape, input, this); }
    Tensor predict(const Tensor& batch) const { return graph_.predict(batch, this); }

private:
    Graph graph_;
    std::vector<MixtureLayer> mixtures_;
    ThetaState theta_;
    MixtureMode mode_ = MixtureMode::Efficient;
};

/// Wraps every searchable layer in a mixture over `pool`; raw α, β start at 0.1.
/// Throws SearchError naming the layer and strategy when qparams lack an entry.
SearchModel build_search_model(const Graph& graph, const std::vector<CalibratorKind>& pool, const QParamTable& qparams);

enum class SearchLoss { CrossEntropy, Mse };

struct SearchConfig {
    double lr = 1e-4;
    std::size_t epochs = 3;
    /// 1-based epochs at whose start the learning rate is multiplied by decay_factor.
    std::vector<std::size_t> decay_epochs{2, 3};
    double decay_factor = 0.1;
    /// 0 selects max(1, calibration size / 8).
    std::size_t batch_size = 0;
    SearchLoss loss = SearchLoss::CrossEntropy;
    std::uint64_t seed = 42;

    double lr_at(std::size_t epoch) const;
    std::size_t effective_batch(std::size_t calibration_size) const;
};

struct ThetaSnapshot {
    /// 0 is the initialization.
    std::size_t epoch = 0;
    std::vector<std::vector<float>> alpha;
    std::vector<std::vector<float>> beta;
};

struct EpochReport {
    std::size_t epoch = 0;
    double loss = 0.0;
    double theta_entropy = 0.0;
    double lr = 0.0;
};

struct SearchTrace {
    std::vector<ThetaSnapshot> snapshots;
    std::vector<EpochReport> epochs;
};

ThetaSnapshot snapshot(const ThetaState& theta, std::size_t epoch);

/// Sample order for one epoch, a pure function of (n, seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);

using EpochCallback = std::function<void(const EpochReport&)>;

/// Plain SGD on raw α, β over shuffled mini-batches of the calibration set.
SearchTrace search(SearchModel& model, const CalibrationSet& calib, const SearchConfig& cfg,
                   const EpochCallback& on_epoch = {});

/// Mean loss of the model over the whole set, evaluated in mini-batches.
double evaluate_search_loss(const SearchModel& model, const CalibrationSet& calib, SearchLoss loss,
                            std::size_t batch_size = 256);

struct LayerAssignment {
    CalibratorKind activation = CalibratorKind::MaxAbs;
    CalibratorKind weight = CalibratorKind::MaxAbs;
    friend bool operator==(const LayerAssignment&, const LayerAssignment&) = default;
};

/// Layer name -> chosen strategies.
using Assignment = std::map<std::string, LayerAssignment>;

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax_first(std::span<const float> v);

/// Winner-take-all per layer and tensor class.
Assignment finalize(const ThetaState& theta);

Assignment uniform_assignment(const Graph& graph, CalibratorKind kind);

/// Graph evaluated with fixed per-layer quantizers: activations are
/// fake-quantized on entry to each conv/linear layer, weights are stored
/// fake-quantized.
class QuantizedGraph final : public LayerHook {
public:
    QuantizedGraph(Graph graph, std::vector<QuantParams> activation, std::vector<Tensor> weights);

    const Graph& graph() const noexcept { return graph_; }
    const std::vector<QuantParams>& activation_params() const noexcept { return activation_; }
    const std::vector<Tensor>& quantized_weights() const noexcept { return weights_; }

    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override;
    Tensor predict(const Tensor& batch) const { return graph_.predict(batch, this); }

private:
    Graph graph_;
    std::vector<QuantParams> activation_;
    std::vector<Tensor> weights_;
};

QuantizedGraph apply_assignment(const Graph& graph, const Assignment& assignment, const QParamTable& qparams);

struct StrategyDistribution {
    /// Canonical four-strategy order.
    std::vector<CalibratorKind> strategies;
    std::vector<std::size_t> activation;
    std::vector<std::size_t> weight;
};

StrategyDistribution report_distribution(const Assignment& assignment);

} // namespace dqss
