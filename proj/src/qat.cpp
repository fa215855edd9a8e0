// SPDX-License-Identifier: Apache-2.0
#include "dqss/qat.hpp"

#include "dqss/metrics.hpp"
#include "dqss/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>
#include <sstream>

namespace dqss {

using nlohmann::json;

namespace {

constexpr std::pair<QatStrategy, std::string_view> kNames[] = {
    {QatStrategy::DoReFa, "dorefa"},
    {QatStrategy::PACT, "pact"},
    {QatStrategy::LSQ, "lsq"},
};

constexpr const char* kStateFormat = "dqss-qat-state";
constexpr int kStateVersion = 1;

struct Grid {
    std::int32_t lo;
    std::int32_t hi;
};

Grid grid_for(QuantTarget target, int bits)
{
    if (bits < kMinBits || bits > kMaxBits) throw QatError("bits must be in [2, 8], got " + std::to_string(bits));
    if (target == QuantTarget::Weight) {
        const std::int32_t qp = max_code(bits);
        return {-qp, qp};
    }
    return {0, (std::int32_t{1} << bits) - 1};
}

std::size_t feature_count(const Tensor& x, QuantTarget target, std::size_t count)
{
    if (count > 0) return count;
    if (target == QuantTarget::Weight || x.rank() < 2) return std::max<std::size_t>(x.numel(), 1);
    return std::max<std::size_t>(x.numel() / x.dim(0), 1);
}

/// Forward of every rule; `scalar` is ignored by DoReFa weights.
Tensor quantize_values(const Tensor& x, QatStrategy s, QuantTarget target, int bits, float scalar)
{
    const Grid g = grid_for(target, bits);
    const float hi = static_cast<float>(g.hi);
    Tensor out(x.shape());
    const std::size_t n = x.numel();
    switch (s) {
    case QatStrategy::DoReFa:
        if (target == QuantTarget::Weight) {
            float m = 0.0f, big = 0.0f;
            for (std::size_t e = 0; e < n; ++e) {
                m = std::max(m, std::fabs(std::tanh(x[e])));
                big = std::max(big, std::fabs(x[e]));
            }
            if (m == 0.0f) return out;
            for (std::size_t e = 0; e < n; ++e) out[e] = big * std::nearbyint(hi * std::tanh(x[e]) / m) / hi;
        } else {
            for (std::size_t e = 0; e < n; ++e) {
                const float c = std::clamp(x[e] / scalar, 0.0f, 1.0f);
                out[e] = scalar * std::nearbyint(hi * c) / hi;
            }
        }
        break;
    case QatStrategy::PACT: {
        const float lo = target == QuantTarget::Weight ? -scalar : 0.0f;
        for (std::size_t e = 0; e < n; ++e) {
            const float c = std::clamp(x[e], lo, scalar);
            out[e] = scalar * std::nearbyint(hi * c / scalar) / hi;
        }
        break;
    }
    case QatStrategy::LSQ: {
        const float lo = static_cast<float>(g.lo);
        for (std::size_t e = 0; e < n; ++e) out[e] = scalar * std::nearbyint(std::clamp(x[e] / scalar, lo, hi));
        break;
    }
    }
    return out;
}

std::string dump_state(const QatModel& model)
{
    std::ostringstream ss;
    ss.precision(6);
    for (std::size_t l = 0; l < model.layers().size(); ++l) {
        const auto& m = model.layers()[l];
        ss << ' ' << m.name << ": act theta=";
        for (float v : softmax_theta(m.alpha->data())) ss << v << ' ';
        ss << "weight theta=";
        for (float v : softmax_theta(m.beta->data())) ss << v << ' ';
        ss << "scalars=";
        for (const auto& q : m.activation) ss << (q.uses_scalar() ? q.value() : 0.0f) << ' ';
        for (const auto& q : m.weight_quantizers) ss << (q.uses_scalar() ? q.value() : 0.0f) << ' ';
        ss << ';';
    }
    return ss.str();
}

void sgd(const std::vector<TensorPtr>& params, double lr)
{
    for (const auto& p : params) {
        if (!p->has_grad()) continue;
        const auto g = p->grad();
        auto d = p->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] -= static_cast<float>(lr * g[i]);
    }
}

double decayed(double lr, const std::vector<std::size_t>& boundaries, double factor, std::size_t epoch)
{
    for (std::size_t b : boundaries) {
        if (b <= epoch) lr *= factor;
    }
    return lr;
}

/// FP32 forward that records max |input| of every searchable layer.
class ObserveHook final : public LayerHook {
public:
    explicit ObserveHook(std::size_t slots) : maxima(slots, 0.0f) {}

    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override
    {
        float m = 0.0f;
        for (float v : tape.value(input).data()) m = std::max(m, std::fabs(v));
        maxima[slot] = m;
        std::optional<VarId> b;
        if (layer.bias) b = tape.constant(*layer.bias);
        return apply_layer_op(tape, layer, input, tape.constant(*layer.weight), b);
    }

    mutable std::vector<float> maxima;
};

/// Each layer runs its single assigned activation and weight quantizer.
class FinalizedHook final : public LayerHook {
public:
    FinalizedHook(const QatModel& model, std::vector<std::pair<std::size_t, std::size_t>> picks)
        : model_(model), picks_(std::move(picks))
    {
    }

    VarId run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const override
    {
        const auto& m = model_.layers().at(slot);
        const auto [a, w] = picks_.at(slot);
        const VarId xq = m.activation[a].apply(tape, input);
        const VarId wq = m.weight_quantizers[w].apply(tape, tape.constant(*m.weight));
        std::optional<VarId> b;
        if (layer.bias) b = tape.constant(*layer.bias);
        return apply_layer_op(tape, layer, xq, wq, b);
    }

private:
    const QatModel& model_;
    std::vector<std::pair<std::size_t, std::size_t>> picks_;
};

json float_array(std::span<const float> v)
{
    json a = json::array();
    for (float f : v) a.push_back(float_to_bits(f));
    return a;
}

void read_float_array(const json& a, std::span<float> out, const std::string& where)
{
    if (!a.is_array() || a.size() != out.size()) {
        throw FieldError(where + ": expected " + std::to_string(out.size()) + " values");
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!a[i].is_string()) throw FieldError(where + ": expected bit-pattern strings");
        out[i] = float_from_bits(a[i].get<std::string>());
    }
}

json quantizers_json(const std::vector<QatQuantizer>& qs)
{
    json a = json::array();
    for (const auto& q : qs) {
        a.push_back(json{{"strategy", std::string(qat_strategy_name(q.strategy()))},
                         {"scalar", float_to_bits(q.value())},
                         {"initialized", q.initialized()}});
    }
    return a;
}

void restore_quantizers(const json& a, std::vector<QatQuantizer>& qs, const std::string& where)
{
    if (!a.is_array() || a.size() != qs.size()) throw FieldError(where + ": expected one entry per pool strategy");
    for (std::size_t i = 0; i < qs.size(); ++i) {
        const json& q = a[i];
        const std::string w = where + "[" + std::to_string(i) + "]";
        if (!q.is_object() || !q.contains("strategy") || !q.contains("scalar") || !q.contains("initialized")) {
            throw FieldError(w + ": expected strategy, scalar, initialized");
        }
        if (q["strategy"] != std::string(qat_strategy_name(qs[i].strategy()))) {
            throw FieldError(w + ".strategy: does not match the pool");
        }
        if (!q["scalar"].is_string() || !q["initialized"].is_boolean()) throw FieldError(w + ": bad field types");
        qs[i].restore(float_from_bits(q["scalar"].get<std::string>()), q["initialized"].get<bool>());
    }
}

} // namespace

std::string_view qat_strategy_name(QatStrategy s)
{
    for (const auto& [k, n] : kNames) {
        if (k == s) return n;
    }
    throw QatError("unknown QAT strategy");
}

std::optional<QatStrategy> parse_qat_strategy(std::string_view name)
{
    for (const auto& [k, n] : kNames) {
        if (n == name) return k;
    }
    return std::nullopt;
}

std::vector<QatStrategy> default_qat_pool()
{
    return {QatStrategy::DoReFa, QatStrategy::PACT, QatStrategy::LSQ};
}

float lsq_grad_scale(std::size_t count, std::int32_t bound)
{
    return static_cast<float>(1.0 / std::sqrt(static_cast<double>(count) * static_cast<double>(bound)));
}

VarId qat_quantize(Tape& tape, VarId x, QatStrategy s, QuantTarget target, int bits, std::optional<VarId> scalar,
                   std::size_t count)
{
    const bool needs_scalar = s != QatStrategy::DoReFa || target == QuantTarget::Activation;
    if (needs_scalar && !scalar) throw QatError(std::string(qat_strategy_name(s)) + " quantizer needs a scalar");
    const float sv = needs_scalar ? tape.value(*scalar).item() : 0.0f;
    if (needs_scalar && !(sv > 0.0f)) throw QatError("quantizer scalar must be positive");

    const Tensor& xv = tape.value(x);
    const std::size_t feats = feature_count(xv, target, count);
    Tensor out = quantize_values(xv, s, target, bits, sv);

    std::vector<VarId> inputs{x};
    if (needs_scalar) inputs.push_back(*scalar);
    return tape.record(std::move(out), std::move(inputs), [=](BackwardContext& ctx) {
        const auto g = ctx.grad_out();
        const Tensor& in = ctx.input(0);
        const std::size_t n = in.numel();
        const Grid grid = grid_for(target, bits);
        const float hi = static_cast<float>(grid.hi);
        auto gx = ctx.input_grad(0);
        std::span<float> gs = needs_scalar ? ctx.input_grad(1) : std::span<float>{};

        switch (s) {
        case QatStrategy::DoReFa:
            if (gx.empty()) break;
            if (target == QuantTarget::Weight) {
                float m = 0.0f, big = 0.0f;
                for (std::size_t e = 0; e < n; ++e) {
                    m = std::max(m, std::fabs(std::tanh(in[e])));
                    big = std::max(big, std::fabs(in[e]));
                }
                for (std::size_t e = 0; e < n; ++e) {
                    if (m == 0.0f) {
                        gx[e] += g[e];
                    } else {
                        const float t = std::tanh(in[e]);
                        gx[e] += g[e] * big * (1.0f - t * t) / m;
                    }
                }
            } else {
                for (std::size_t e = 0; e < n; ++e) {
                    if (in[e] >= 0.0f && in[e] <= sv) gx[e] += g[e];
                }
            }
            break;
        case QatStrategy::PACT: {
            const float lo = target == QuantTarget::Weight ? -sv : 0.0f;
            double acc = 0.0;
            for (std::size_t e = 0; e < n; ++e) {
                const float v = in[e];
                if (v >= lo && v <= sv) {
                    if (!gx.empty()) gx[e] += g[e];
                } else if (v > sv) {
                    acc += g[e];
                } else if (target == QuantTarget::Weight) {
                    acc -= g[e];
                }
            }
            if (!gs.empty()) gs[0] += static_cast<float>(acc);
            break;
        }
        case QatStrategy::LSQ: {
            const float lo = static_cast<float>(grid.lo);
            double acc = 0.0;
            for (std::size_t e = 0; e < n; ++e) {
                const float u = in[e] / sv;
                if (u < lo) {
                    acc += static_cast<double>(g[e]) * lo;
                } else if (u > hi) {
                    acc += static_cast<double>(g[e]) * hi;
                } else {
                    if (!gx.empty()) gx[e] += g[e];
                    acc += static_cast<double>(g[e]) * (std::nearbyint(u) - u);
                }
            }
            if (!gs.empty()) gs[0] += static_cast<float>(acc * lsq_grad_scale(feats, grid.hi));
            break;
        }
        }
    });
}

Tensor qat_quantize(const Tensor& x, QatStrategy s, QuantTarget target, int bits, float scalar)
{
    return quantize_values(x, s, target, bits, scalar);
}

QatQuantizer::QatQuantizer(QatStrategy strategy, QuantTarget target, int bits)
    : strategy_(strategy), target_(target), bits_(bits), scalar_(make_param(Tensor(Shape{1}, 1.0f), false))
{
    grid_for(target, bits);
    scalar_->set_requires_grad(learnable());
}

void QatQuantizer::initialize(float observed_max)
{
    if (!(observed_max > 0.0f) || !std::isfinite(observed_max)) observed_max = 1.0f;
    const float v = strategy_ == QatStrategy::LSQ ? observed_max / static_cast<float>(grid_for(target_, bits_).hi)
                                                  : observed_max;
    (*scalar_)[0] = std::max(v, kMinLearnableScalar);
    initialized_ = true;
}

void QatQuantizer::restore(float value, bool initialized)
{
    (*scalar_)[0] = value;
    initialized_ = initialized;
}

bool QatQuantizer::project()
{
    if (!learnable()) return false;
    float& v = (*scalar_)[0];
    if (v >= kMinLearnableScalar) return false;
    v = kMinLearnableScalar;
    return true;
}

VarId QatQuantizer::apply(Tape& tape, VarId x) const
{
    if (!uses_scalar()) return qat_quantize(tape, x, strategy_, target_, bits_, std::nullopt);
    if (!initialized_) throw QatError(std::string(qat_strategy_name(strategy_)) + " quantizer used before warm-up");
    const VarId s = learnable() ? tape.param(scalar_) : tape.constant(*scalar_);
    return qat_quantize(tape, x, strategy_, target_, bits_, s);
}

std::size_t SharedWeightMixture::weight_storage_count() const
{
    std::set<const Tensor*> tensors{weight.get()};
    return tensors.size();
}

VarId shared_mixture_forward(Tape& tape, const Layer& layer, const SharedWeightMixture& m, VarId input,
                             VarId theta_a, VarId theta_b)
{
    if (layer.weight != m.weight) throw QatError("layer '" + layer.name + "' does not own the mixture's weight");
    const VarId w = tape.param(m.weight);
    std::optional<VarId> b;
    if (layer.bias) b = tape.param(layer.bias);

    std::vector<VarId> abr, wbr;
    for (const auto& q : m.activation) abr.push_back(q.apply(tape, input));
    for (const auto& q : m.weight_quantizers) wbr.push_back(q.apply(tape, w));
    const VarId a_hat = tape.weighted_sum(abr, theta_a);
    const VarId w_hat = tape.weighted_sum(wbr, theta_b);
    return apply_layer_op(tape, layer, a_hat, w_hat, b);
}

QatModel::QatModel(const Graph& graph, std::vector<QatStrategy> pool, int bits)
    : graph_(graph.clone()), pool_(std::move(pool)), bits_(bits)
{
    if (pool_.empty()) throw QatError("QAT strategy pool is empty");
    graph_.set_trainable(true);
    for (std::size_t idx : graph_.searchable_layers()) {
        const Layer& l = graph_.layers()[idx];
        SharedWeightMixture m;
        m.name = l.name;
        m.weight = l.weight;
        for (QatStrategy s : pool_) {
            m.activation.emplace_back(s, QuantTarget::Activation, bits);
            m.weight_quantizers.emplace_back(s, QuantTarget::Weight, bits);
        }
        m.alpha = make_param(Tensor(Shape{pool_.size()}, kInitialImportance), true);
        m.beta = make_param(Tensor(Shape{pool_.size()}, kInitialImportance), true);
        layers_.push_back(std::move(m));
    }
}

std::vector<std::string> QatModel::layer_names() const
{
    std::vector<std::string> out;
    for (const auto& m : layers_) out.push_back(m.name);
    return out;
}

std::vector<std::string> QatModel::pool_names() const
{
    std::vector<std::string> out;
    for (QatStrategy s : pool_) out.emplace_back(qat_strategy_name(s));
    return out;
}

VarId QatModel::run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const
{
    const auto& m = layers_.at(slot);
    const VarId ta = tape.softmax(tape.param(m.alpha));
    const VarId tb = tape.softmax(tape.param(m.beta));
    return shared_mixture_forward(tape, layer, m, input, ta, tb);
}

VarId QatModel::forward(Tape& tape, VarId input) const
{
    ++forward_passes_;
    return graph_.forward(tape, input, this);
}

Tensor QatModel::predict(const Tensor& batch) const
{
    return graph_.predict(batch, this);
}

std::vector<TensorPtr> QatModel::weight_params() const
{
    std::vector<TensorPtr> out;
    for (const Layer& l : graph_.layers()) {
        if (l.weight) out.push_back(l.weight);
        if (l.bias) out.push_back(l.bias);
    }
    return out;
}

std::vector<TensorPtr> QatModel::theta_params() const
{
    std::vector<TensorPtr> out;
    for (const auto& m : layers_) {
        out.push_back(m.alpha);
        out.push_back(m.beta);
    }
    return out;
}

std::vector<TensorPtr> QatModel::quantizer_params() const
{
    std::vector<TensorPtr> out;
    for (const auto& m : layers_) {
        for (const auto* qs : {&m.activation, &m.weight_quantizers}) {
            for (const auto& q : *qs) {
                if (q.learnable()) out.push_back(q.scalar());
            }
        }
    }
    return out;
}

ThetaSnapshot QatModel::snapshot(std::size_t epoch) const
{
    ThetaSnapshot s;
    s.epoch = epoch;
    for (const auto& m : layers_) {
        s.alpha.push_back(softmax_theta(m.alpha->data()));
        s.beta.push_back(softmax_theta(m.beta->data()));
    }
    return s;
}

double QatModel::mean_theta_entropy() const
{
    if (layers_.empty()) return 0.0;
    double h = 0.0;
    for (const auto& m : layers_) {
        for (const auto& t : {softmax_theta(m.alpha->data()), softmax_theta(m.beta->data())}) {
            for (float v : t) {
                if (v > 0.0f) h -= static_cast<double>(v) * std::log(static_cast<double>(v));
            }
        }
    }
    return h / static_cast<double>(2 * layers_.size());
}

NamedAssignment QatModel::finalize() const
{
    NamedAssignment out;
    for (const auto& m : layers_) {
        out[m.name] = {std::string(qat_strategy_name(pool_[argmax_first(softmax_theta(m.alpha->data()))])),
                       std::string(qat_strategy_name(pool_[argmax_first(softmax_theta(m.beta->data()))]))};
    }
    return out;
}

Tensor QatModel::predict_finalized(const Tensor& batch, const NamedAssignment& assignment) const
{
    auto index_of = [&](const std::string& name, const std::string& layer) {
        for (std::size_t i = 0; i < pool_.size(); ++i) {
            if (qat_strategy_name(pool_[i]) == name) return i;
        }
        throw QatError("layer '" + layer + "': strategy '" + name + "' is not in the pool");
    };
    std::vector<std::pair<std::size_t, std::size_t>> picks;
    for (const auto& m : layers_) {
        const auto it = assignment.find(m.name);
        if (it == assignment.end()) throw QatError("assignment has no entry for layer '" + m.name + "'");
        picks.emplace_back(index_of(it->second.first, m.name), index_of(it->second.second, m.name));
    }
    const FinalizedHook hook(*this, std::move(picks));
    return graph_.predict(batch, &hook);
}

QatTrace qat_train(QatModel& model, const CalibrationSet& train, const QatConfig& cfg, std::size_t first_epoch,
                   const EpochCallback& on_epoch)
{
    if (train.empty()) throw QatError("training set is empty");
    if (first_epoch == 0) throw QatError("epochs are 1-based");
    const std::size_t n = train.size();
    const std::size_t bs = std::clamp<std::size_t>(cfg.batch_size, 1, n);
    auto warn = [&](const std::string& msg) {
        if (cfg.on_warning) {
            cfg.on_warning(msg);
        } else {
            std::cerr << "warning: " << msg << '\n';
        }
    };

    if (first_epoch > 1) {
        for (const auto& m : model.layers()) {
            for (const auto* qs : {&m.activation, &m.weight_quantizers}) {
                for (const auto& q : *qs) {
                    if (q.uses_scalar() && !q.initialized()) throw QatError("resuming without a completed warm-up");
                }
            }
        }
    }

    QatTrace trace;
    trace.snapshots.push_back(model.snapshot(first_epoch - 1));
    const std::size_t forwards_before = model.forward_passes();
    const auto weights = model.weight_params();
    const auto thetas = model.theta_params();
    const auto scalars = model.quantizer_params();
    std::optional<double> initial_loss;

    for (std::size_t epoch = first_epoch; epoch <= cfg.epochs; ++epoch) {
        const auto order = epoch_order(n, cfg.seed, epoch);
        double loss_sum = 0.0;
        EpochReport rep;
        rep.epoch = epoch;

        if (epoch == 1) {
            ObserveHook hook(model.layers().size());
            for (std::size_t begin = 0; begin < n; begin += bs) {
                const std::span<const std::size_t> idx(order.data() + begin, std::min(bs, n - begin));
                const Tensor x = train.gather(idx);
                const Tensor logits = model.graph().predict(x, &hook);
                loss_sum += mean_cross_entropy(logits, train.gather_labels(idx)) * static_cast<double>(idx.size());
                ++trace.counters.observe_passes;
                for (std::size_t l = 0; l < model.layers().size(); ++l) {
                    auto& m = model.layers()[l];
                    m.observed_input_max = m.observed ? cfg.ema_momentum * m.observed_input_max +
                                                            (1.0f - cfg.ema_momentum) * hook.maxima[l]
                                                      : hook.maxima[l];
                    m.observed = true;
                }
            }
            for (auto& m : model.layers()) {
                float wmax = 0.0f;
                for (float v : m.weight->data()) wmax = std::max(wmax, std::fabs(v));
                for (auto& q : m.activation) q.initialize(m.observed_input_max);
                for (auto& q : m.weight_quantizers) q.initialize(wmax);
            }
        } else {
            const double lr_w = decayed(cfg.lr_weight, cfg.decay_epochs, cfg.decay_factor, epoch);
            const double lr_t = decayed(cfg.lr_theta, cfg.decay_epochs, cfg.decay_factor, epoch);
            rep.lr = lr_w;
            std::size_t step = 0;
            for (std::size_t begin = 0; begin < n; begin += bs, ++step) {
                const std::span<const std::size_t> idx(order.data() + begin, std::min(bs, n - begin));
                const Tensor x = train.gather(idx);
                const std::vector<int> labels = train.gather_labels(idx);

                Tape tape;
                const VarId loss = tape.cross_entropy(model.forward(tape, tape.constant(x)), labels);
                const double lv = tape.value(loss).item();
                if (!initial_loss) initial_loss = lv;
                if (!std::isfinite(lv) || lv > cfg.divergence_factor * std::max(*initial_loss, 1e-12)) {
                    std::ostringstream msg;
                    msg << "QAT diverged at epoch " << epoch << ", step " << step << ": loss " << lv
                        << " (initial " << *initial_loss << ");" << dump_state(model);
                    throw QatDivergedError(msg.str());
                }
                for (const auto* group : {&weights, &thetas, &scalars}) {
                    for (const auto& p : *group) p->zero_grad();
                }
                tape.backward(loss);
                if (tape.consumed()) ++trace.counters.backwards;

                sgd(weights, lr_w);
                sgd(thetas, lr_t);
                sgd(scalars, lr_t);
                for (auto& m : model.layers()) {
                    for (auto* qs : {&m.activation, &m.weight_quantizers}) {
                        for (auto& q : *qs) {
                            if (q.project()) {
                                warn("layer '" + m.name + "' " + std::string(qat_strategy_name(q.strategy())) +
                                     " scalar projected to " + std::to_string(kMinLearnableScalar));
                            }
                        }
                    }
                }
                ++trace.counters.steps;
                loss_sum += lv * static_cast<double>(idx.size());
            }
        }

        rep.loss = loss_sum / static_cast<double>(n);
        rep.theta_entropy = model.mean_theta_entropy();
        trace.epochs.push_back(rep);
        trace.snapshots.push_back(model.snapshot(epoch));
        if (on_epoch) on_epoch(rep);
    }
    trace.counters.forwards = model.forward_passes() - forwards_before;
    return trace;
}

std::string serialize_qat_state(const QatModel& model, std::size_t epochs_completed)
{
    json pool = json::array();
    for (const auto& name : model.pool_names()) pool.push_back(name);
    json layers = json::object();
    for (const auto& m : model.layers()) {
        layers[m.name] = json{{"alpha", float_array(m.alpha->data())},
                              {"beta", float_array(m.beta->data())},
                              {"observed", m.observed},
                              {"observed_input_max", float_to_bits(m.observed_input_max)},
                              {"activation", quantizers_json(m.activation)},
                              {"weight", quantizers_json(m.weight_quantizers)}};
    }
    const json doc{{"format", kStateFormat},       {"version", kStateVersion},
                   {"bits", model.bits()},         {"pool", std::move(pool)},
                   {"epochs_completed", epochs_completed}, {"layers", std::move(layers)}};
    return doc.dump(2) + "\n";
}

namespace {

struct StateHeader {
    int bits = 0;
    std::vector<QatStrategy> pool;
    std::size_t epochs_completed = 0;
};

StateHeader read_state_header(const json& doc, const std::string& source)
{
    if (!doc.is_object() || doc.value("format", std::string()) != kStateFormat) {
        throw FieldError(source + ".format: expected \"" + std::string(kStateFormat) + "\"");
    }
    if (!doc.contains("version") || !doc["version"].is_number_integer()) throw FieldError(source + ".version: missing");
    if (doc["version"].get<int>() != kStateVersion) {
        throw VersionMismatchError(source + ": QAT state version " + doc["version"].dump() + " is not supported");
    }
    StateHeader h;
    if (!doc.contains("bits") || !doc["bits"].is_number_integer()) throw FieldError(source + ".bits: missing");
    h.bits = doc["bits"].get<int>();
    if (!doc.contains("pool") || !doc["pool"].is_array()) throw FieldError(source + ".pool: missing");
    for (const json& p : doc["pool"]) {
        const auto s = p.is_string() ? parse_qat_strategy(p.get<std::string>()) : std::nullopt;
        if (!s) throw UnknownStrategyError(source + ".pool: unknown strategy " + p.dump());
        h.pool.push_back(*s);
    }
    if (!doc.contains("epochs_completed") || !doc["epochs_completed"].is_number_unsigned()) {
        throw FieldError(source + ".epochs_completed: missing");
    }
    h.epochs_completed = doc["epochs_completed"].get<std::size_t>();
    return h;
}

} // namespace

std::size_t apply_qat_state(QatModel& model, const std::string& text, const std::string& source)
{
    const json doc = parse_json_strict(text, source);
    const StateHeader h = read_state_header(doc, source);
    if (h.bits != model.bits() || h.pool != model.pool()) throw FieldError(source + ": bits or pool differ from the model");
    if (!doc.contains("layers") || !doc["layers"].is_object()) throw FieldError(source + ".layers: missing");
    const json& layers = doc["layers"];
    if (layers.size() != model.layers().size()) throw FieldError(source + ".layers: layer count differs from the model");
    for (auto& m : model.layers()) {
        const std::string w = source + ".layers." + m.name;
        if (!layers.contains(m.name)) throw FieldError(w + ": missing");
        const json& lj = layers[m.name];
        if (!lj.is_object()) throw FieldError(w + ": expected an object");
        for (const char* key : {"alpha", "beta", "observed", "observed_input_max", "activation", "weight"}) {
            if (!lj.contains(key)) throw FieldError(w + "." + key + ": missing");
        }
        read_float_array(lj["alpha"], m.alpha->data(), w + ".alpha");
        read_float_array(lj["beta"], m.beta->data(), w + ".beta");
        if (!lj["observed"].is_boolean() || !lj["observed_input_max"].is_string()) throw FieldError(w + ": bad field types");
        m.observed = lj["observed"].get<bool>();
        m.observed_input_max = float_from_bits(lj["observed_input_max"].get<std::string>());
        restore_quantizers(lj["activation"], m.activation, w + ".activation");
        restore_quantizers(lj["weight"], m.weight_quantizers, w + ".weight");
    }
    return h.epochs_completed;
}

void save_qat_checkpoint(const QatModel& model, std::size_t epochs_completed, const fs::path& dir)
{
    fs::create_directories(dir);
    save_model(model.graph(), dir / "model.json");
    write_text_file(dir / "qat_state.json", serialize_qat_state(model, epochs_completed));
}

QatCheckpoint load_qat_checkpoint(const fs::path& dir)
{
    const fs::path state_path = dir / "qat_state.json";
    const std::string text = read_text_file(state_path);
    const StateHeader h = read_state_header(parse_json_strict(text, state_path.string()), state_path.string());
    QatModel model(load_model(dir / "model.json"), h.pool, h.bits);
    const std::size_t done = apply_qat_state(model, text, state_path.string());
    return QatCheckpoint{std::move(model), done};
}

std::vector<double> train_float(Graph& graph, const CalibrationSet& train, const FloatTrainConfig& cfg)
{
    if (train.empty()) throw QatError("training set is empty");
    graph.set_trainable(true);
    std::vector<TensorPtr> params;
    for (const Layer& l : graph.layers()) {
        if (l.weight) params.push_back(l.weight);
        if (l.bias) params.push_back(l.bias);
    }
    const std::size_t n = train.size();
    const std::size_t bs = std::clamp<std::size_t>(cfg.batch_size, 1, n);
    std::vector<double> losses;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = epoch_order(n, cfg.seed, epoch);
        double sum = 0.0;
        for (std::size_t begin = 0; begin < n; begin += bs) {
            const std::span<const std::size_t> idx(order.data() + begin, std::min(bs, n - begin));
            Tape tape;
            const VarId loss = tape.cross_entropy(graph.forward(tape, tape.constant(train.gather(idx))),
                                                  train.gather_labels(idx));
            for (const auto& p : params) p->zero_grad();
            tape.backward(loss);
            sgd(params, cfg.lr);
            sum += static_cast<double>(tape.value(loss).item()) * static_cast<double>(idx.size());
        }
        losses.push_back(sum / static_cast<double>(n));
    }
    return losses;
}

} // namespace dqss
