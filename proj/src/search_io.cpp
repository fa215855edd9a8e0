// SPDX-License-Identifier: Apache-2.0
#include "dqss/search_io.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace dqss {

using nlohmann::json;

namespace {

constexpr const char* kAssignmentFormat = "dqss-assignment";
constexpr const char* kTraceHeader = "epoch,layer,tensor_class,strategy,theta";

CalibratorKind strategy_from(const std::string& v, const std::string& where)
{
    const auto k = parse_calibrator(v);
    if (!k) throw UnknownStrategyError(where + ": unknown strategy '" + v + "'");
    return *k;
}

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

} // namespace

std::string_view tensor_class_name(QuantTarget t)
{
    return t == QuantTarget::Activation ? "activation" : "weight";
}

std::string serialize_named_assignment(const NamedAssignment& a)
{
    json layers = json::object();
    for (const auto& [name, la] : a) layers[name] = json{{"act", la.first}, {"weight", la.second}};
    const json doc{{"format", kAssignmentFormat}, {"version", kAssignmentFormatVersion}, {"layers", std::move(layers)}};
    return doc.dump(2) + "\n";
}

NamedAssignment parse_named_assignment(const std::string& text, const std::string& source)
{
    const json doc = parse_json_strict(text, source);
    if (!doc.is_object() || !doc.contains("format") || doc["format"] != kAssignmentFormat) {
        throw FieldError(source + ".format: expected \"" + std::string(kAssignmentFormat) + "\"");
    }
    if (!doc.contains("version") || !doc["version"].is_number_integer()) throw FieldError(source + ".version: missing");
    if (doc["version"].get<int>() != kAssignmentFormatVersion) {
        throw VersionMismatchError(source + ": assignment version " + doc["version"].dump() + " is not supported");
    }
    if (!doc.contains("layers") || !doc["layers"].is_object()) throw FieldError(source + ".layers: expected an object");

    NamedAssignment out;
    for (const auto& [name, lj] : doc["layers"].items()) {
        const std::string w = source + ".layers." + name;
        if (!lj.is_object()) throw FieldError(w + ": expected an object");
        for (const char* key : {"act", "weight"}) {
            if (!lj.contains(key) || !lj[key].is_string()) throw FieldError(w + "." + key + ": expected a strategy name");
        }
        out[name] = {lj["act"].get<std::string>(), lj["weight"].get<std::string>()};
    }
    return out;
}

std::string serialize_assignment(const Assignment& a)
{
    NamedAssignment named;
    for (const auto& [name, la] : a) {
        named[name] = {std::string(calibrator_name(la.activation)), std::string(calibrator_name(la.weight))};
    }
    return serialize_named_assignment(named);
}

Assignment parse_assignment(const std::string& text, const std::string& source)
{
    Assignment out;
    for (const auto& [name, la] : parse_named_assignment(text, source)) {
        const std::string w = source + ".layers." + name;
        out[name] = LayerAssignment{strategy_from(la.first, w + ".act"), strategy_from(la.second, w + ".weight")};
    }
    return out;
}

void save_assignment(const Assignment& a, const fs::path& path)
{
    write_text_file(path, serialize_assignment(a));
}

Assignment load_assignment(const fs::path& path)
{
    return parse_assignment(read_text_file(path), path.string());
}

std::vector<ThetaTraceRow> theta_trace_rows(const std::vector<ThetaSnapshot>& snapshots,
                                            const std::vector<std::string>& layers,
                                            const std::vector<std::string>& strategies)
{
    std::vector<ThetaTraceRow> rows;
    for (const ThetaSnapshot& s : snapshots) {
        for (std::size_t l = 0; l < layers.size(); ++l) {
            for (QuantTarget tc : {QuantTarget::Activation, QuantTarget::Weight}) {
                const auto& theta = tc == QuantTarget::Activation ? s.alpha.at(l) : s.beta.at(l);
                for (std::size_t k = 0; k < strategies.size(); ++k) {
                    rows.push_back({s.epoch, layers[l], tc, strategies[k], theta.at(k)});
                }
            }
        }
    }
    return rows;
}

std::vector<ThetaTraceRow> theta_trace_rows(const std::vector<ThetaSnapshot>& snapshots, const ThetaState& layout)
{
    std::vector<std::string> names;
    for (CalibratorKind k : layout.pool()) names.emplace_back(calibrator_name(k));
    return theta_trace_rows(snapshots, layout.layers(), names);
}

std::string serialize_theta_trace(const std::vector<ThetaTraceRow>& rows)
{
    std::ostringstream out;
    out << kTraceHeader << '\n';
    char num[32];
    for (const auto& r : rows) {
        std::snprintf(num, sizeof num, "%.9g", static_cast<double>(r.theta));
        out << r.epoch << ',' << r.layer << ',' << tensor_class_name(r.tensor_class) << ','
            << r.strategy << ',' << num << '\n';
    }
    return out.str();
}

std::vector<ThetaTraceRow> parse_theta_trace(const std::string& text)
{
    std::istringstream in(text);
    std::string line;
    std::size_t row = 1;
    if (!std::getline(in, line) || line != kTraceHeader) throw CsvRowError("theta trace", row, "header mismatch");
    std::vector<ThetaTraceRow> rows;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 5) throw CsvRowError("theta trace", row, "expected 5 fields");
        ThetaTraceRow r;
        const auto [p, ec] = std::from_chars(f[0].data(), f[0].data() + f[0].size(), r.epoch);
        if (ec != std::errc{} || p != f[0].data() + f[0].size()) throw CsvRowError("theta trace", row, "bad epoch");
        r.layer = f[1];
        if (f[2] == "activation") {
            r.tensor_class = QuantTarget::Activation;
        } else if (f[2] == "weight") {
            r.tensor_class = QuantTarget::Weight;
        } else {
            throw CsvRowError("theta trace", row, "bad tensor_class '" + f[2] + "'");
        }
        if (f[3].empty()) throw CsvRowError("theta trace", row, "empty strategy");
        r.strategy = f[3];
        char* end = nullptr;
        r.theta = std::strtof(f[4].c_str(), &end);
        if (end != f[4].c_str() + f[4].size()) throw CsvRowError("theta trace", row, "bad theta");
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string serialize_distribution(const StrategyDistribution& d)
{
    std::ostringstream out;
    out << "tensor_class,strategy,count\n";
    for (QuantTarget tc : {QuantTarget::Activation, QuantTarget::Weight}) {
        const auto& counts = tc == QuantTarget::Activation ? d.activation : d.weight;
        for (std::size_t k = 0; k < d.strategies.size(); ++k) {
            out << tensor_class_name(tc) << ',' << calibrator_name(d.strategies[k]) << ',' << counts[k] << '\n';
        }
    }
    return out.str();
}

std::string format_distribution_table(const StrategyDistribution& d)
{
    std::ostringstream out;
    char line[96];
    std::snprintf(line, sizeof line, "%-10s %10s %10s\n", "strategy", "activation", "weight");
    out << line;
    for (std::size_t k = 0; k < d.strategies.size(); ++k) {
        std::snprintf(line, sizeof line, "%-10s %10zu %10zu\n", std::string(calibrator_name(d.strategies[k])).c_str(),
                      d.activation[k], d.weight[k]);
        out << line;
    }
    return out.str();
}

} // namespace dqss
