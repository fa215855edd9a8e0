// SPDX-License-Identifier: Apache-2.0
#include "dqss/search.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dqss {

namespace {

std::string format_theta(const std::vector<float>& t)
{
    std::ostringstream ss;
    ss.precision(6);
    ss << '[';
    for (std::size_t i = 0; i < t.size(); ++i) ss << (i ? ", " : "") << t[i];
    ss << ']';
    return ss.str();
}

double entropy(const std::vector<float>& t)
{
    double h = 0.0;
    for (float v : t) {
        if (v > 0.0f) h -= static_cast<double>(v) * std::log(static_cast<double>(v));
    }
    return h;
}

void sgd_step(const TensorPtr& p, double lr)
{
    if (!p->has_grad()) return;
    const auto g = p->grad();
    auto d = p->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= static_cast<float>(lr * g[i]);
}

VarId batch_loss(Tape& tape, const SearchModel& model, const Tensor& x, std::span<const int> labels, SearchLoss loss)
{
    const VarId logits = model.forward(tape, tape.constant(x));
    if (loss == SearchLoss::CrossEntropy) return tape.cross_entropy(logits, labels);
    return tape.mse(logits, model.graph().predict(x));
}

} // namespace

ThetaState::ThetaState(std::vector<CalibratorKind> pool, std::vector<std::string> layers, float init)
    : pool_(std::move(pool)), layers_(std::move(layers))
{
    if (pool_.empty()) throw SearchError("strategy pool is empty");
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        alpha_.push_back(make_param(Tensor(Shape{pool_.size()}, init), true));
        beta_.push_back(make_param(Tensor(Shape{pool_.size()}, init), true));
    }
}

std::vector<float> ThetaState::theta_alpha(std::size_t layer) const
{
    return softmax_theta(alpha(layer)->data());
}

std::vector<float> ThetaState::theta_beta(std::size_t layer) const
{
    return softmax_theta(beta(layer)->data());
}

double ThetaState::mean_entropy() const
{
    if (layers_.empty()) return 0.0;
    double h = 0.0;
    for (std::size_t l = 0; l < layers_.size(); ++l) h += entropy(theta_alpha(l)) + entropy(theta_beta(l));
    return h / static_cast<double>(2 * layers_.size());
}

void ThetaState::zero_grad()
{
    for (auto& p : alpha_) p->zero_grad();
    for (auto& p : beta_) p->zero_grad();
}

ThetaState ThetaState::clone() const
{
    ThetaState c(pool_, layers_);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        c.alpha_[l]->storage() = alpha_[l]->storage();
        c.beta_[l]->storage() = beta_[l]->storage();
    }
    return c;
}

SearchModel::SearchModel(Graph graph, std::vector<MixtureLayer> mixtures, ThetaState theta)
    : graph_(std::move(graph)), mixtures_(std::move(mixtures)), theta_(std::move(theta))
{
    const auto slots = graph_.searchable_layers();
    if (mixtures_.size() != slots.size() || theta_.num_layers() != slots.size()) {
        throw SearchError("search model needs one mixture and one theta slice per searchable layer");
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const std::string& name = graph_.layers()[slots[s]].name;
        if (mixtures_[s].layer.name != name || theta_.layers()[s] != name) {
            throw SearchError("mixture slot " + std::to_string(s) + " does not match layer '" + name + "'");
        }
        if (mixtures_[s].branches() != theta_.pool().size()) {
            throw SearchError("layer '" + name + "': branch count differs from pool size");
        }
        mixtures_[s].validate();
    }
}

VarId SearchModel::run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const
{
    const MixtureLayer& m = mixtures_.at(slot);
    if (m.layer.name != layer.name) throw SearchError("mixture slot mismatch at layer '" + layer.name + "'");
    const VarId ta = tape.softmax(tape.param(theta_.alpha(slot)));
    const VarId tb = tape.softmax(tape.param(theta_.beta(slot)));
    return mixture_forward(tape, m, input, ta, tb, mode_);
}

SearchModel build_search_model(const Graph& graph, const std::vector<CalibratorKind>& pool, const QParamTable& qparams)
{
    if (pool.empty()) throw SearchError("strategy pool is empty");
    std::vector<MixtureLayer> mixtures;
    std::vector<std::string> names;
    for (std::size_t idx : graph.searchable_layers()) {
        const Layer& layer = graph.layers()[idx];
        const auto lit = qparams.find(layer.name);
        MixtureLayer m{layer, {}, {}};
        for (CalibratorKind k : pool) {
            if (lit == qparams.end() || !lit->second.contains(k)) {
                throw SearchError("qparams missing layer '" + layer.name + "' strategy '" +
                                  std::string(calibrator_name(k)) + "'");
            }
            const StrategyParams& sp = lit->second.at(k);
            m.activation.push_back(sp.activation);
            m.weight.push_back(sp.weight);
        }
        names.push_back(layer.name);
        mixtures.push_back(std::move(m));
    }
    return SearchModel(graph, std::move(mixtures), ThetaState(pool, std::move(names)));
}

double SearchConfig::lr_at(std::size_t epoch) const
{
    double lr_e = lr;
    for (std::size_t d : decay_epochs) {
        if (d <= epoch) lr_e *= decay_factor;
    }
    return lr_e;
}

std::size_t SearchConfig::effective_batch(std::size_t calibration_size) const
{
    if (batch_size > 0) return std::min(batch_size, std::max<std::size_t>(calibration_size, 1));
    return std::max<std::size_t>(1, calibration_size / 8);
}

ThetaSnapshot snapshot(const ThetaState& theta, std::size_t epoch)
{
    ThetaSnapshot s;
    s.epoch = epoch;
    for (std::size_t l = 0; l < theta.num_layers(); ++l) {
        s.alpha.push_back(theta.theta_alpha(l));
        s.beta.push_back(theta.theta_beta(l));
    }
    return s;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch)
{
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

SearchTrace search(SearchModel& model, const CalibrationSet& calib, const SearchConfig& cfg, const EpochCallback& on_epoch)
{
    if (calib.empty()) throw SearchError("calibration set is empty");
    ThetaState& theta = model.theta();
    const std::size_t n = calib.size();
    const std::size_t bs = cfg.effective_batch(n);

    SearchTrace trace;
    trace.snapshots.push_back(snapshot(theta, 0));
    std::vector<std::size_t> order;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double lr = cfg.lr_at(epoch);
        order = epoch_order(n, cfg.seed, epoch);

        double loss_sum = 0.0;
        std::size_t batch_index = 0;
        for (std::size_t begin = 0; begin < n; begin += bs, ++batch_index) {
            const std::span<const std::size_t> idx(order.data() + begin, std::min(bs, n - begin));
            const Tensor x = calib.gather(idx);
            const std::vector<int> labels = calib.gather_labels(idx);

            Tape tape;
            const VarId loss = batch_loss(tape, model, x, labels, cfg.loss);
            const float lv = tape.value(loss).item();
            if (!std::isfinite(lv)) {
                std::ostringstream msg;
                msg << "non-finite search loss at epoch " << epoch << ", batch " << batch_index << ";";
                for (std::size_t l = 0; l < theta.num_layers(); ++l) {
                    msg << ' ' << theta.layers()[l] << " act=" << format_theta(theta.theta_alpha(l))
                        << " weight=" << format_theta(theta.theta_beta(l)) << ';';
                }
                throw SearchDivergedError(msg.str());
            }
            theta.zero_grad();
            tape.backward(loss);
            for (std::size_t l = 0; l < theta.num_layers(); ++l) {
                sgd_step(theta.alpha(l), lr);
                sgd_step(theta.beta(l), lr);
            }
            loss_sum += static_cast<double>(lv) * static_cast<double>(idx.size());
        }

        EpochReport rep{epoch, loss_sum / static_cast<double>(n), theta.mean_entropy(), lr};
        trace.epochs.push_back(rep);
        trace.snapshots.push_back(snapshot(theta, epoch));
        if (on_epoch) on_epoch(rep);
    }
    return trace;
}

double evaluate_search_loss(const SearchModel& model, const CalibrationSet& calib, SearchLoss loss, std::size_t batch_size)
{
    if (calib.empty()) throw SearchError("calibration set is empty");
    batch_size = std::max<std::size_t>(batch_size, 1);
    double total = 0.0;
    for (std::size_t begin = 0; begin < calib.size(); begin += batch_size) {
        const std::size_t end = std::min(begin + batch_size, calib.size());
        const Tensor x = calib.batch(begin, end);
        const std::span<const int> labels(calib.labels.data() + begin, end - begin);
        Tape tape;
        total += static_cast<double>(tape.value(batch_loss(tape, model, x, labels, loss)).item()) *
                 static_cast<double>(end - begin);
    }
    return total / static_cast<double>(calib.size());
}

std::size_t argmax_first(std::span<const float> v)
{
    if (v.empty()) throw ShapeError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

Assignment finalize(const ThetaState& theta)
{
    Assignment out;
    for (std::size_t l = 0; l < theta.num_layers(); ++l) {
        out[theta.layers()[l]] = LayerAssignment{theta.pool()[argmax_first(theta.theta_alpha(l))],
                                                 theta.pool()[argmax_first(theta.theta_beta(l))]};
    }
    return out;
}

Assignment uniform_assignment(const Graph& graph, CalibratorKind kind)
{
    Assignment out;
    for (std::size_t idx : graph.searchable_layers()) out[graph.layers()[idx].name] = LayerAssignment{kind, kind};
    return out;
}

QuantizedGraph::QuantizedGraph(Graph graph, std::vector<QuantParams> activation, std::vector<Tensor> weights)
    : graph_(std::move(graph)), activation_(std::move(activation)), weights_(std::move(weights))
{
    const std::size_t slots = graph_.searchable_layers().size();
    if (activation_.size() != slots || weights_.size() != slots) {
        throw SearchError("quantized graph needs params for every searchable layer");
    }
}

VarId QuantizedGraph::run(Tape& tape, const Layer& layer, std::size_t slot, VarId input) const
{
    const VarId x = fake_quant(tape, input, activation_.at(slot));
    const VarId w = tape.constant(weights_.at(slot));
    std::optional<VarId> b;
    if (layer.bias) b = tape.constant(*layer.bias);
    return apply_layer_op(tape, layer, x, w, b);
}

QuantizedGraph apply_assignment(const Graph& graph, const Assignment& assignment, const QParamTable& qparams)
{
    std::vector<QuantParams> act;
    std::vector<Tensor> weights;
    for (std::size_t idx : graph.searchable_layers()) {
        const Layer& layer = graph.layers()[idx];
        const auto ait = assignment.find(layer.name);
        if (ait == assignment.end()) throw SearchError("assignment has no entry for layer '" + layer.name + "'");
        const auto lit = qparams.find(layer.name);
        auto lookup = [&](CalibratorKind k) -> const StrategyParams& {
            if (lit == qparams.end() || !lit->second.contains(k)) {
                throw SearchError("qparams missing layer '" + layer.name + "' strategy '" +
                                  std::string(calibrator_name(k)) + "'");
            }
            return lit->second.at(k);
        };
        act.push_back(lookup(ait->second.activation).activation);
        weights.push_back(fake_quant(*layer.weight, lookup(ait->second.weight).weight));
    }
    return QuantizedGraph(graph, std::move(act), std::move(weights));
}

StrategyDistribution report_distribution(const Assignment& assignment)
{
    StrategyDistribution d;
    d.strategies = default_ptq_pool();
    d.activation.assign(d.strategies.size(), 0);
    d.weight.assign(d.strategies.size(), 0);
    for (const auto& [name, a] : assignment) {
        ++d.activation[static_cast<std::size_t>(a.activation)];
        ++d.weight[static_cast<std::size_t>(a.weight)];
    }
    return d;
}

} // namespace dqss
