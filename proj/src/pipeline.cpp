// SPDX-License-Identifier: Apache-2.0
#include "dqss/pipeline.hpp"

#include "dqss/calibrators.hpp"
#include "dqss/metrics.hpp"
#include "dqss/model_io.hpp"
#include "dqss/qat.hpp"
#include "dqss/search_io.hpp"
#include "dqss/toy.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

namespace dqss::pipeline {

ExitCode exit_code_for(const std::exception& e)
{
    if (dynamic_cast<const UsageError*>(&e)) return ExitCode::Usage;
    if (dynamic_cast<const FileAccessError*>(&e) || dynamic_cast<const MissingBlobError*>(&e)) return ExitCode::Io;
    if (dynamic_cast<const SearchDivergedError*>(&e) || dynamic_cast<const QatDivergedError*>(&e) ||
        dynamic_cast<const NonFiniteError*>(&e) || dynamic_cast<const NonFiniteInputError*>(&e)) {
        return ExitCode::Numerical;
    }
    if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ModelIoError*>(&e) ||
        dynamic_cast<const GraphError*>(&e) || dynamic_cast<const ShapeError*>(&e) ||
        dynamic_cast<const SearchError*>(&e) || dynamic_cast<const QatError*>(&e) ||
        dynamic_cast<const CalibrationError*>(&e) || dynamic_cast<const QuantError*>(&e) ||
        dynamic_cast<const std::invalid_argument*>(&e)) {
        return ExitCode::Validation;
    }
    return ExitCode::Other;
}

// ---------------------------------------------------------------- config

const std::vector<std::string>& config_keys()
{
    static const std::vector<std::string> keys = {
        "model",      "data",         "eval-data",    "qparams",    "assignment", "resume", "out",
        "pool",       "bits",         "seed",         "epochs",     "lr",         "lr-weight",
        "decay-epochs", "decay-factor", "batch-size", "limit",      "loss",       "uniform-theta",
        "threads",    "toy"};
    return keys;
}

namespace {

std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string canonical_key(std::string key)
{
    std::replace(key.begin(), key.end(), '_', '-');
    return key;
}

std::vector<std::string> split_list(const std::string& value)
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream in(value);
    while (std::getline(in, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value)
{
    T v{};
    const char* first = value.data();
    const char* last = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc{} || ptr != last) throw ConfigError(key + ": cannot parse '" + value + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& value)
{
    if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
    if (value == "false" || value == "0" || value == "no" || value == "off") return false;
    throw ConfigError(key + ": expected true or false, got '" + value + "'");
}

} // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source)
{
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    const auto& keys = config_keys();
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        const std::string where = source + ":" + std::to_string(lineno);
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = canonical_key(trim(std::string_view(body).substr(0, eq)));
        const std::string value = trim(std::string_view(body).substr(eq + 1));
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
        if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
    }
    return kv;
}

void apply_config_value(PipelineConfig& cfg, const std::string& raw_key, const std::string& value)
{
    const std::string key = canonical_key(raw_key);
    if (key == "model") cfg.model = value;
    else if (key == "data") cfg.data = value;
    else if (key == "eval-data") cfg.eval_data = value;
    else if (key == "qparams") cfg.qparams = value;
    else if (key == "assignment") cfg.assignment = value;
    else if (key == "resume") cfg.resume = value;
    else if (key == "out") cfg.out = value;
    else if (key == "pool") cfg.pool = split_list(value);
    else if (key == "bits") cfg.bits = parse_number<int>(key, value);
    else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "epochs") cfg.epochs = parse_number<std::size_t>(key, value);
    else if (key == "lr") cfg.lr = parse_number<double>(key, value);
    else if (key == "lr-weight") cfg.lr_weight = parse_number<double>(key, value);
    else if (key == "decay-epochs") {
        std::vector<std::size_t> epochs;
        for (const auto& item : split_list(value)) epochs.push_back(parse_number<std::size_t>(key, item));
        cfg.decay_epochs = std::move(epochs);
    }
    else if (key == "decay-factor") cfg.decay_factor = parse_number<double>(key, value);
    else if (key == "batch-size") cfg.batch_size = parse_number<std::size_t>(key, value);
    else if (key == "limit") cfg.limit = parse_number<std::size_t>(key, value);
    else if (key == "loss") {
        if (value == "ce") cfg.loss = SearchLoss::CrossEntropy;
        else if (value == "mse") cfg.loss = SearchLoss::Mse;
        else throw ConfigError("loss: expected ce or mse, got '" + value + "'");
    }
    else if (key == "uniform-theta") cfg.uniform_theta = parse_bool(key, value);
    else if (key == "threads") cfg.threads = parse_number<int>(key, value);
    else if (key == "toy") cfg.toy = value;
    else throw ConfigError("unknown key '" + key + "'");
}

PipelineConfig resolve_config(const std::map<std::string, std::string>& file_values,
                              const std::vector<std::pair<std::string, std::string>>& flag_values)
{
    PipelineConfig cfg;
    for (const auto& [k, v] : file_values) apply_config_value(cfg, k, v);
    for (const auto& [k, v] : flag_values) apply_config_value(cfg, k, v);
    return cfg;
}

void validate_config(const PipelineConfig& cfg)
{
    if (cfg.bits < 2 || cfg.bits > 8) throw ConfigError("bits: must be in 2..8, got " + std::to_string(cfg.bits));
    std::set<std::string> seen;
    for (const auto& p : cfg.pool) {
        if (!seen.insert(p).second) throw ConfigError("pool: duplicate strategy '" + p + "'");
    }
    if (cfg.lr && !(*cfg.lr > 0.0)) throw ConfigError("lr: must be positive");
    if (!(cfg.lr_weight > 0.0)) throw ConfigError("lr-weight: must be positive");
    if (cfg.threads < 0) throw ConfigError("threads: must be >= 0");
}

std::vector<CalibratorKind> ptq_pool(const PipelineConfig& cfg)
{
    if (cfg.pool.empty()) return default_ptq_pool();
    std::vector<CalibratorKind> pool;
    for (const auto& name : cfg.pool) {
        const auto k = parse_calibrator(name);
        if (!k) throw ConfigError("pool: unknown strategy '" + name + "'");
        pool.push_back(*k);
    }
    return pool;
}

std::string epoch_line(const EpochReport& r)
{
    char buf[128];
    std::snprintf(buf, sizeof buf, "epoch=%zu loss=%.9g theta_entropy=%.9g", r.epoch, r.loss, r.theta_entropy);
    return buf;
}

// ---------------------------------------------------------------- commands

namespace {

Graph require_model(const PipelineConfig& cfg)
{
    if (cfg.model.empty()) throw ConfigError("model: path not set");
    return load_model(cfg.model);
}

CalibrationSet require_data(const fs::path& dir, const char* key, const PipelineConfig& cfg, const Graph& g)
{
    if (dir.empty()) throw ConfigError(std::string(key) + ": directory not set");
    const std::size_t limit = cfg.limit == 0 ? std::numeric_limits<std::size_t>::max() : cfg.limit;
    CalibrationSet set = load_calibration(dir, limit, g.sample_shape(), g.num_classes());
    if (set.empty()) throw ConfigError(std::string(key) + ": no samples in " + dir.string());
    return set;
}

std::string format_metric(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

std::string eval_row(const std::string& variant, const Tensor& logits, const CalibrationSet& set)
{
    return variant + "," + format_metric(top1_accuracy(logits, set.labels)) + "," +
           format_metric(mean_cross_entropy(logits, set.labels)) + "\n";
}

std::vector<QatStrategy> qat_pool(const PipelineConfig& cfg)
{
    if (cfg.pool.empty()) return default_qat_pool();
    std::vector<QatStrategy> pool;
    for (const auto& name : cfg.pool) {
        const auto s = parse_qat_strategy(name);
        if (!s) throw ConfigError("pool: unknown QAT strategy '" + name + "'");
        pool.push_back(*s);
    }
    return pool;
}

} // namespace

void run_calibrate(const PipelineConfig& cfg, std::ostream& log)
{
    validate_config(cfg);
    const Graph g = require_model(cfg);
    const CalibrationSet calib = require_data(cfg.data, "data", cfg, g);
    const auto pool = ptq_pool(cfg);
    const QParamTable table = calibrate_graph(g, calib.batch(), pool, cfg.bits);
    save_qparams(table, cfg.out / "qparams.json");
    log << "calibrated " << table.size() << " layers x " << pool.size() << " strategies on " << calib.size()
        << " samples\n";
}

void run_search(const PipelineConfig& cfg, std::ostream& out, std::ostream& log)
{
    validate_config(cfg);
    const Graph g = require_model(cfg);
    const CalibrationSet calib = require_data(cfg.data, "data", cfg, g);
    const QParamTable qp = load_qparams(cfg.qparams_path());
    SearchModel model = build_search_model(g, ptq_pool(cfg), qp);

    SearchConfig sc;
    if (cfg.lr) sc.lr = *cfg.lr;
    if (cfg.epochs) sc.epochs = *cfg.epochs;
    if (cfg.decay_epochs) sc.decay_epochs = *cfg.decay_epochs;
    sc.decay_factor = cfg.decay_factor;
    sc.batch_size = cfg.batch_size;
    sc.loss = cfg.loss;
    sc.seed = cfg.seed;
    const SearchTrace trace = search(model, calib, sc, [&](const EpochReport& r) { log << epoch_line(r) << '\n'; });

    const Assignment assignment = finalize(model.theta());
    save_assignment(assignment, cfg.out / "assignment.json");
    write_text_file(cfg.out / "theta_trace.csv",
                    serialize_theta_trace(theta_trace_rows(trace.snapshots, model.theta())));
    const StrategyDistribution dist = report_distribution(assignment);
    write_text_file(cfg.out / "distribution.csv", serialize_distribution(dist));
    out << format_distribution_table(dist);
}

void run_eval(const PipelineConfig& cfg, std::ostream& out, std::ostream& log)
{
    validate_config(cfg);
    const Graph g = require_model(cfg);
    const CalibrationSet eval = require_data(cfg.eval_data_path(), "eval-data", cfg, g);
    const QParamTable qp = load_qparams(cfg.qparams_path());
    const auto pool = ptq_pool(cfg);
    const Tensor batch = eval.batch();

    std::string csv = "variant,top1,loss\n";
    csv += eval_row("fp32", g.predict(batch), eval);
    for (CalibratorKind k : pool) {
        const QuantizedGraph q = apply_assignment(g, uniform_assignment(g, k), qp);
        csv += eval_row("uniform:" + std::string(calibrator_name(k)), q.predict(batch), eval);
    }
    if (!cfg.uniform_theta) {
        const QuantizedGraph q = apply_assignment(g, load_assignment(cfg.assignment_path()), qp);
        csv += eval_row("dqss", q.predict(batch), eval);
    }
    const SearchModel none = build_search_model(g, pool, qp);
    csv += eval_row("dqss-none", none.predict(batch), eval);

    write_text_file(cfg.out / "eval.csv", csv);
    out << csv;
    log << "evaluated " << eval.size() << " samples\n";
}

void run_qat_train(const PipelineConfig& cfg, std::ostream& out, std::ostream& log)
{
    validate_config(cfg);
    const auto pool = qat_pool(cfg);
    std::optional<QatModel> model;
    std::size_t first_epoch = 1;
    if (!cfg.resume.empty()) {
        QatCheckpoint ck = load_qat_checkpoint(cfg.resume);
        if (ck.model.bits() != cfg.bits) {
            throw ConfigError("bits: checkpoint was trained with " + std::to_string(ck.model.bits()) + " bits");
        }
        if (ck.model.pool() != pool) throw ConfigError("pool: differs from the checkpoint's pool");
        first_epoch = ck.epochs_completed + 1;
        model.emplace(std::move(ck.model));
    } else {
        model.emplace(require_model(cfg), pool, cfg.bits);
    }
    const Graph& g = model->graph();
    const CalibrationSet train = require_data(cfg.data, "data", cfg, g);
    const CalibrationSet eval = require_data(cfg.eval_data_path(), "eval-data", cfg, g);

    QatConfig qc;
    if (cfg.epochs) qc.epochs = *cfg.epochs;
    if (cfg.lr) qc.lr_theta = *cfg.lr;
    qc.lr_weight = cfg.lr_weight;
    if (cfg.decay_epochs) qc.decay_epochs = *cfg.decay_epochs;
    qc.decay_factor = cfg.decay_factor;
    if (cfg.batch_size > 0) qc.batch_size = cfg.batch_size;
    qc.seed = cfg.seed;
    qc.on_warning = [&](const std::string& msg) { log << "warning: " << msg << '\n'; };
    if (first_epoch > qc.epochs) {
        throw ConfigError("epochs: checkpoint already completed " + std::to_string(first_epoch - 1) + " epochs");
    }

    const QatTrace trace =
        qat_train(*model, train, qc, first_epoch, [&](const EpochReport& r) { log << epoch_line(r) << '\n'; });

    save_qat_checkpoint(*model, qc.epochs, cfg.out / "checkpoint");
    write_text_file(cfg.out / "qat_trace.csv",
                    serialize_theta_trace(theta_trace_rows(trace.snapshots, model->layer_names(), model->pool_names())));
    const NamedAssignment assignment = model->finalize();
    write_text_file(cfg.out / "qat_assignment.json", serialize_named_assignment(assignment));

    const Tensor batch = eval.batch();
    std::string csv = "variant,top1,loss\n";
    csv += eval_row("qat-mixture", model->predict(batch), eval);
    csv += eval_row("qat-finalized", model->predict_finalized(batch, assignment), eval);
    write_text_file(cfg.out / "qat_eval.csv", csv);
    out << csv;
}

void run_report(const PipelineConfig& cfg, std::ostream& out)
{
    validate_config(cfg);
    const StrategyDistribution dist = report_distribution(load_assignment(cfg.assignment_path()));
    write_text_file(cfg.out / "distribution.csv", serialize_distribution(dist));
    out << format_distribution_table(dist);
}

void run_make_toy(const PipelineConfig& cfg, std::ostream& log)
{
    validate_config(cfg);
    const toy::Benchmark b = toy::benchmark_by_name(cfg.toy);
    save_model(b.model, cfg.out / "model" / "model.json");
    save_calibration(b.train, cfg.out / "train");
    save_calibration(b.calib, cfg.out / "calib");
    save_calibration(b.eval, cfg.out / "eval");
    log << "wrote " << cfg.toy << " model (" << b.model.parameter_count() << " parameters) and " << b.train.size()
        << "/" << b.calib.size() << "/" << b.eval.size() << " train/calib/eval samples to " << cfg.out.string()
        << '\n';
}

} // namespace dqss::pipeline
