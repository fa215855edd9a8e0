// SPDX-License-Identifier: Apache-2.0
#include "dqss/calibrators.hpp"

#include "dqss/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dqss {

namespace {

constexpr std::pair<CalibratorKind, std::string_view> kNames[] = {
    {CalibratorKind::MaxAbs, "maxabs"},
    {CalibratorKind::KL, "kl"},
    {CalibratorKind::EQ, "eq"},
    {CalibratorKind::ADMM, "admm"},
};

float max_abs(std::span<const float> values)
{
    float m = 0.0f;
    for (float v : values) m = std::max(m, std::fabs(v));
    return m;
}

// KL(P || Q) for kept_bins leading bins of the histogram with outliers folded
// into the last kept bin and Q re-expressed through `levels` quantized bins.
double kl_for_candidate(const std::vector<std::uint64_t>& counts, std::size_t kept, std::size_t levels,
                        std::vector<double>& p, std::vector<double>& q)
{
    p.assign(kept, 0.0);
    q.assign(kept, 0.0);
    for (std::size_t j = 0; j < kept; ++j) p[j] = static_cast<double>(counts[j]);
    double outliers = 0.0;
    for (std::size_t j = kept; j < counts.size(); ++j) outliers += static_cast<double>(counts[j]);
    p[kept - 1] += outliers;

    for (std::size_t g = 0; g < levels; ++g) {
        const std::size_t lo = g * kept / levels;
        const std::size_t hi = (g + 1) * kept / levels;
        double total = 0.0;
        std::size_t nonzero = 0;
        for (std::size_t j = lo; j < hi; ++j) {
            total += static_cast<double>(counts[j]);
            nonzero += counts[j] != 0 ? 1 : 0;
        }
        if (nonzero == 0) continue;
        const double share = total / static_cast<double>(nonzero);
        for (std::size_t j = lo; j < hi; ++j) {
            if (counts[j] != 0) q[j] = share;
        }
    }

    const auto normalize = [kept](std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        const double denom = 1.0 + static_cast<double>(kept) * kKlSmoothing;
        for (double& x : v) x = ((s > 0.0 ? x / s : 0.0) + kKlSmoothing) / denom;
    };
    normalize(p);
    normalize(q);

    double kl = 0.0;
    for (std::size_t j = 0; j < kept; ++j) kl += p[j] * std::log(p[j] / q[j]);
    return kl;
}

double cosine(const float* a, const float* b, std::size_t n, bool& valid)
{
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    valid = na > 0.0 && nb > 0.0;
    return valid ? dot / std::sqrt(na * nb) : 0.0;
}

class CaptureHook final : public LayerHook {
public:
    explicit CaptureHook(std::vector<Tensor>& sink) : sink_(sink) {}
    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override
    {
        if (sink_.size() <= slot) sink_.resize(slot + 1);
        sink_[slot] = tape.value(input);
        const VarId w = tape.param(layer.weight);
        std::optional<VarId> b;
        if (layer.bias) b = tape.param(layer.bias);
        return apply_layer_op(tape, layer, input, w, b);
    }

private:
    std::vector<Tensor>& sink_;
};

} // namespace

std::string_view calibrator_name(CalibratorKind kind)
{
    for (const auto& [k, n] : kNames) {
        if (k == kind) return n;
    }
    throw CalibrationError("unknown calibrator kind");
}

std::optional<CalibratorKind> parse_calibrator(std::string_view name)
{
    for (const auto& [k, n] : kNames) {
        if (n == name) return k;
    }
    return std::nullopt;
}

std::vector<CalibratorKind> default_ptq_pool()
{
    return {CalibratorKind::MaxAbs, CalibratorKind::KL, CalibratorKind::EQ, CalibratorKind::ADMM};
}

QuantParams calibrate_maxabs(std::span<const float> values, int bits)
{
    return QuantParams::symmetric(max_abs(values), bits);
}

// ---------------------------------------------------------------- Histogram

Histogram::Histogram(float range, std::size_t bins) : range_(range), counts_(bins, 0)
{
    if (bins == 0) throw CalibrationError("histogram needs at least one bin");
}

Histogram::Histogram(float range, std::vector<std::uint64_t> counts) : range_(range), counts_(std::move(counts))
{
    if (counts_.empty()) throw CalibrationError("histogram needs at least one bin");
}

Histogram Histogram::of_magnitudes(std::span<const float> samples, std::size_t bins)
{
    Histogram h(max_abs(samples), bins);
    h.add(samples);
    return h;
}

void Histogram::add(std::span<const float> samples)
{
    if (!(range_ > 0.0f)) return;
    const double per_bin = static_cast<double>(counts_.size()) / range_;
    for (float v : samples) {
        const double pos = std::fabs(static_cast<double>(v)) * per_bin;
        const std::size_t bin = std::min(static_cast<std::size_t>(pos), counts_.size() - 1);
        ++counts_[bin];
    }
}

float Histogram::upper_edge(std::size_t i) const
{
    return static_cast<float>(static_cast<double>(range_) * static_cast<double>(i + 1) / static_cast<double>(counts_.size()));
}

std::uint64_t Histogram::total() const
{
    return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

// ---------------------------------------------------------------- KL

KlScan kl_scan(const Histogram& hist, int bits)
{
    const std::size_t levels = static_cast<std::size_t>(max_code(bits));
    const std::size_t bins = hist.bins();
    if (bins < levels) {
        throw CalibrationError("KL needs at least " + std::to_string(levels) + " histogram bins at " +
                               std::to_string(bits) + " bits, got " + std::to_string(bins));
    }
    KlScan scan;
    scan.first_candidate = levels;
    scan.divergences.assign(bins - levels + 1, 0.0);
    const auto& counts = hist.counts();
    parallel_for(scan.divergences.size(), [&](std::size_t k) {
        std::vector<double> p, q;
        scan.divergences[k] = kl_for_candidate(counts, levels + k, levels, p, q);
    });

    std::size_t best = 0;
    for (std::size_t k = 1; k < scan.divergences.size(); ++k) {
        if (scan.divergences[k] < scan.divergences[best]) best = k;
    }
    scan.kept_bins = levels + best;
    scan.divergence = scan.divergences[best];
    return scan;
}

QuantParams calibrate_kl(const Histogram& hist, int bits)
{
    if (!(hist.range() > 0.0f) || hist.total() == 0) return QuantParams::symmetric(0.0f, bits);
    const KlScan scan = kl_scan(hist, bits);
    return QuantParams::symmetric(hist.upper_edge(scan.kept_bins - 1), bits);
}

QuantParams calibrate_kl(std::span<const float> samples, int bits, std::size_t bins)
{
    return calibrate_kl(Histogram::of_magnitudes(samples, bins), bits);
}

// ---------------------------------------------------------------- EQ

std::vector<float> eq_scale_grid(float base_scale, std::size_t points, float low, float high)
{
    std::vector<float> grid(points);
    for (std::size_t k = 0; k < points; ++k) {
        const double frac = points > 1 ? static_cast<double>(k) / static_cast<double>(points - 1) : 0.0;
        grid[k] = static_cast<float>(base_scale * (low + (high - low) * frac));
    }
    return grid;
}

EqResult calibrate_eq(const Layer& layer, const Tensor& activations, int bits, QuantTarget target,
                      std::span<const float> scales)
{
    if (activations.rank() == 0 || activations.dim(0) == 0) throw CalibrationError("EQ needs a non-empty calibration batch");
    if (scales.empty()) throw CalibrationError("EQ needs a non-empty scale grid");

    const Tensor& weight = *layer.weight;
    const Tensor reference = evaluate_layer_op(layer, activations, weight);
    const std::size_t batch = reference.dim(0);
    const std::size_t per_sample = reference.numel() / batch;

    EqResult result;
    result.candidates.reserve(scales.size());
    for (float s : scales) result.candidates.push_back(QuantParams::from_scale(s, bits));
    result.scores.assign(scales.size(), 0.0);
    std::vector<std::size_t> counted(scales.size(), 0);

    parallel_for(scales.size(), [&](std::size_t k) {
        const QuantParams& p = result.candidates[k];
        const Tensor out = target == QuantTarget::Activation
                               ? evaluate_layer_op(layer, fake_quant(activations, p), weight)
                               : evaluate_layer_op(layer, activations, fake_quant(weight, p));
        double total = 0.0;
        std::size_t used = 0;
        for (std::size_t s = 0; s < batch; ++s) {
            bool valid = false;
            const double c = cosine(reference.data().data() + s * per_sample, out.data().data() + s * per_sample,
                                    per_sample, valid);
            if (valid) {
                total += c;
                ++used;
            }
        }
        result.scores[k] = used ? total / static_cast<double>(used) : 0.0;
        counted[k] = used;
    });

    if (std::all_of(counted.begin(), counted.end(), [](std::size_t c) { return c == 0; })) {
        throw CalibrationError("EQ for layer '" + layer.name + "': every output has zero norm");
    }
    // Highest score wins; among equal scores the smaller scale.
    std::size_t best = scales.size();
    for (std::size_t k = 0; k < scales.size(); ++k) {
        if (counted[k] == 0) continue;
        if (best == scales.size() || result.scores[k] > result.scores[best] ||
            (result.scores[k] == result.scores[best] && result.candidates[k].scale < result.candidates[best].scale)) {
            best = k;
        }
    }
    result.best = best;
    result.params = result.candidates[best];
    return result;
}

QuantParams calibrate_eq(const Layer& layer, const Tensor& activations, int bits, QuantTarget target)
{
    const Tensor& source = target == QuantTarget::Activation ? activations : *layer.weight;
    const QuantParams base = calibrate_maxabs(source.data(), bits);
    if (base.degenerate) return base;
    const auto grid = eq_scale_grid(base.scale);
    return calibrate_eq(layer, activations, bits, target, grid).params;
}

// ---------------------------------------------------------------- ADMM

AdmmResult calibrate_admm_traced(std::span<const float> values, int bits, std::size_t iters, double tol)
{
    AdmmResult r;
    const QuantParams init = calibrate_maxabs(values, bits);
    r.params = init;
    if (init.degenerate) {
        r.objective.push_back(quantization_sse(values, init));
        return r;
    }
    const float qmax = static_cast<float>(init.qmax);
    double current = quantization_sse(values, init);
    r.objective.push_back(current);

    for (std::size_t it = 0; it < iters; ++it) {
        const float s = r.params.scale;
        // Q-step: nearest in-range code for every value. s-step: least squares.
        double wq = 0.0, qq = 0.0;
        for (float v : values) {
            const float q = std::clamp(std::nearbyint(v / s), -qmax, qmax);
            wq += static_cast<double>(v) * q;
            qq += static_cast<double>(q) * q;
        }
        if (qq == 0.0) break;
        const double s_next = wq / qq;
        if (!(s_next > 0.0) || !std::isfinite(s_next)) break;
        const QuantParams next = QuantParams::from_scale(static_cast<float>(s_next), bits);
        const double obj = quantization_sse(values, next);
        if (obj > current) break;
        ++r.iterations;
        r.params = next;
        current = obj;
        r.objective.push_back(obj);
        if (std::fabs(next.scale - s) / s < tol) break;
    }
    return r;
}

QuantParams calibrate_admm(std::span<const float> values, int bits, std::size_t iters, double tol)
{
    return calibrate_admm_traced(values, bits, iters, tol).params;
}

// ---------------------------------------------------------------- whole model

std::vector<Tensor> collect_layer_inputs(const Graph& graph, const Tensor& batch)
{
    std::vector<Tensor> inputs;
    CaptureHook hook(inputs);
    Tape tape;
    graph.forward(tape, tape.constant(batch), &hook);
    return inputs;
}

QuantParams calibrate_tensor(CalibratorKind kind, const Layer& layer, const Tensor& activations, QuantTarget target,
                             int bits)
{
    const std::span<const float> values =
        target == QuantTarget::Activation ? activations.data() : layer.weight->data();
    switch (kind) {
    case CalibratorKind::MaxAbs:
        return calibrate_maxabs(values, bits);
    case CalibratorKind::KL:
        return calibrate_kl(values, bits);
    case CalibratorKind::EQ:
        return calibrate_eq(layer, activations, bits, target);
    case CalibratorKind::ADMM:
        return calibrate_admm(values, bits);
    }
    throw CalibrationError("unknown calibrator kind");
}

QParamTable calibrate_graph(const Graph& graph, const Tensor& batch, std::span<const CalibratorKind> pool, int bits)
{
    if (pool.empty()) throw CalibrationError("calibration pool is empty");
    const auto inputs = collect_layer_inputs(graph, batch);
    const auto searchable = graph.searchable_layers();
    std::vector<std::map<CalibratorKind, StrategyParams>> per_layer(searchable.size());

    parallel_for(searchable.size(), [&](std::size_t slot) {
        const Layer& layer = graph.layers()[searchable[slot]];
        for (CalibratorKind kind : pool) {
            per_layer[slot][kind] = StrategyParams{
                calibrate_tensor(kind, layer, inputs[slot], QuantTarget::Activation, bits),
                calibrate_tensor(kind, layer, inputs[slot], QuantTarget::Weight, bits),
            };
        }
    });

    QParamTable table;
    for (std::size_t slot = 0; slot < searchable.size(); ++slot) {
        table[graph.layers()[searchable[slot]].name] = std::move(per_layer[slot]);
    }
    return table;
}

} // namespace dqss
