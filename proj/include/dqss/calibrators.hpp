// SPDX-License-Identifier: Apache-2.0
//
// The post-training calibration strategies that make up the search alphabet:
// Max_Abs, KL (histogram threshold search), EQ (cosine-similarity scale
// search) and ADMM (alternating projection / least-squares scale fit).
#pragma once

#include "dqss/graph.hpp"
#include "dqss/quantizer.hpp"
#include "dqss/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dqss {

enum class CalibratorKind { MaxAbs = 0, KL = 1, EQ = 2, ADMM = 3 };

/// Lowercase file/CLI name: maxabs | kl | eq | admm.
std::string_view calibrator_name(CalibratorKind kind);
std::optional<CalibratorKind> parse_calibrator(std::string_view name);
/// The full four-strategy pool in canonical order.
std::vector<CalibratorKind> default_ptq_pool();

class CalibrationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- Max_Abs

QuantParams calibrate_maxabs(std::span<const float> values, int bits);

// ---------------------------------------------------------------- KL

constexpr std::size_t kDefaultKlBins = 2048;
constexpr double kKlSmoothing = 1e-9;

/// Histogram of |x| over uniform bins spanning [0, range].
class Histogram {
public:
    Histogram(float range, std::size_t bins);
    Histogram(float range, std::vector<std::uint64_t> counts);

    /// Range taken from max |x| of the samples.
    static Histogram of_magnitudes(std::span<const float> samples, std::size_t bins);

    void add(std::span<const float> samples);

    float range() const noexcept { return range_; }
    std::size_t bins() const noexcept { return counts_.size(); }
    const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }
    /// Upper edge of bin i (i.e. the threshold keeping bins [0, i]).
    float upper_edge(std::size_t i) const;
    std::uint64_t total() const;

private:
    float range_;
    std::vector<std::uint64_t> counts_;
};

struct KlScan {
    /// Number of leading bins kept by the chosen threshold.
    std::size_t kept_bins = 0;
    double divergence = 0.0;
    /// divergence[k] for kept_bins = first_candidate + k.
    std::size_t first_candidate = 0;
    std::vector<double> divergences;
};

/// Scans every candidate threshold from 2^(bits-1)-1 bins up to all bins and
/// returns the argmin of KL(P || Q); ties go to the smaller threshold.
KlScan kl_scan(const Histogram& hist, int bits);
QuantParams calibrate_kl(const Histogram& hist, int bits);
QuantParams calibrate_kl(std::span<const float> samples, int bits, std::size_t bins = kDefaultKlBins);

// ---------------------------------------------------------------- EQ

enum class QuantTarget { Activation, Weight };

constexpr std::size_t kDefaultEqGridPoints = 100;
constexpr float kEqGridLow = 0.5f;
constexpr float kEqGridHigh = 1.2f;

/// `points` scales uniform in [low, high] * base_scale.
std::vector<float> eq_scale_grid(float base_scale, std::size_t points = kDefaultEqGridPoints,
                                 float low = kEqGridLow, float high = kEqGridHigh);

struct EqResult {
    QuantParams params;
    std::vector<QuantParams> candidates;
    /// Mean cosine similarity per candidate.
    std::vector<double> scores;
    std::size_t best = 0;
};

/// Picks the grid scale maximizing the mean per-sample cosine similarity
/// between the layer's FP32 output and its output with `target` fake-quantized.
EqResult calibrate_eq(const Layer& layer, const Tensor& activations, int bits, QuantTarget target,
                      std::span<const float> scales);
QuantParams calibrate_eq(const Layer& layer, const Tensor& activations, int bits, QuantTarget target);

// ---------------------------------------------------------------- ADMM

constexpr std::size_t kDefaultAdmmIters = 50;
constexpr double kDefaultAdmmTol = 1e-6;

struct AdmmResult {
    QuantParams params;
    /// Reconstruction error ||W - fake_quant(W)||^2 of each accepted iterate,
    /// starting with the Max_Abs initialization.
    std::vector<double> objective;
    std::size_t iterations = 0;
};

AdmmResult calibrate_admm_traced(std::span<const float> values, int bits, std::size_t iters = kDefaultAdmmIters,
                                 double tol = kDefaultAdmmTol);
QuantParams calibrate_admm(std::span<const float> values, int bits, std::size_t iters = kDefaultAdmmIters,
                           double tol = kDefaultAdmmTol);

// ---------------------------------------------------------------- whole model

struct StrategyParams {
    QuantParams activation;
    QuantParams weight;
    friend bool operator==(const StrategyParams&, const StrategyParams&) = default;
};

/// layer name -> strategy -> (activation, weight) params.
using QParamTable = std::map<std::string, std::map<CalibratorKind, StrategyParams>>;

/// Captures the FP32 input of every searchable layer over a calibration batch.
std::vector<Tensor> collect_layer_inputs(const Graph& graph, const Tensor& batch);

/// Calibrates activations (from inputs collected over the whole batch) and
/// weights (from the weight tensor) of every searchable layer with every
/// strategy in the pool. Layers are processed in parallel.
QParamTable calibrate_graph(const Graph& graph, const Tensor& batch, std::span<const CalibratorKind> pool, int bits);

/// Params for one tensor with one strategy; `layer`/`activations` supply EQ's context.
QuantParams calibrate_tensor(CalibratorKind kind, const Layer& layer, const Tensor& activations, QuantTarget target,
                             int bits);

} // namespace dqss
