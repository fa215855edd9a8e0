// SPDX-License-Identifier: Apache-2.0
#include "dqss/model_io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace dqss {

using nlohmann::json;

namespace {

constexpr const char* kModelFormat = "dqss-model";
constexpr const char* kQParamsFormat = "dqss-qparams";

std::uint32_t to_little_endian(std::uint32_t v)
{
    if constexpr (std::endian::native == std::endian::big) {
        v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
    }
    return v;
}

const json& field(const json& obj, const std::string& key, const std::string& where)
{
    if (!obj.is_object()) throw FieldError(where + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw FieldError(where + "." + key + ": missing");
    return *it;
}

std::size_t unsigned_field(const json& obj, const std::string& key, const std::string& where)
{
    const json& v = field(obj, key, where);
    if (!v.is_number_unsigned()) throw FieldError(where + "." + key + ": expected a non-negative integer");
    return v.get<std::size_t>();
}

std::size_t unsigned_field_or(const json& obj, const std::string& key, const std::string& where, std::size_t fallback)
{
    return obj.contains(key) ? unsigned_field(obj, key, where) : fallback;
}

int int_field(const json& obj, const std::string& key, const std::string& where)
{
    const json& v = field(obj, key, where);
    if (!v.is_number_integer()) throw FieldError(where + "." + key + ": expected an integer");
    return v.get<int>();
}

std::string string_field(const json& obj, const std::string& key, const std::string& where)
{
    const json& v = field(obj, key, where);
    if (!v.is_string()) throw FieldError(where + "." + key + ": expected a string");
    return v.get<std::string>();
}

float float_field(const json& obj, const std::string& key, const std::string& where)
{
    const std::string text = string_field(obj, key, where);
    try {
        return float_from_bits(text);
    } catch (const ModelIoError& e) {
        throw FieldError(where + "." + key + ": " + e.what());
    }
}

Shape shape_field(const json& obj, const std::string& key, const std::string& where)
{
    const json& v = field(obj, key, where);
    if (!v.is_array()) throw FieldError(where + "." + key + ": expected an array of dimensions");
    Shape s;
    for (const json& d : v) {
        if (!d.is_number_unsigned() || d.get<std::size_t>() == 0) {
            throw FieldError(where + "." + key + ": dimensions must be positive integers");
        }
        s.push_back(d.get<std::size_t>());
    }
    return s;
}

void check_format(const json& doc, const char* format, int version, const std::string& source)
{
    if (string_field(doc, "format", source) != format) {
        throw FieldError(source + ".format: expected \"" + std::string(format) + "\"");
    }
    const int v = int_field(doc, "version", source);
    if (v != version) {
        throw VersionMismatchError(source + ": format version " + std::to_string(v) + " is not supported (expected " +
                                   std::to_string(version) + ")");
    }
}

TensorPtr load_blob_ref(const json& layer, const std::string& key, const std::string& where, const fs::path& base)
{
    const json& ref = field(layer, key, where);
    const std::string w = where + "." + key;
    const std::string file = string_field(ref, "file", w);
    const Shape shape = shape_field(ref, "shape", w);
    return std::make_shared<Tensor>(read_blob(base / file, shape));
}

json blob_ref(const TensorPtr& t, const std::string& file, const fs::path& base)
{
    write_blob(base / file, *t);
    return json{{"file", file}, {"shape", t->shape()}};
}

} // namespace

CsvRowError::CsvRowError(const std::string& file, std::size_t row, const std::string& what)
    : ModelIoError(file + " row " + std::to_string(row) + ": " + what), row_(row)
{
}

std::string float_to_bits(float v)
{
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", std::bit_cast<std::uint32_t>(v));
    return buf;
}

float float_from_bits(std::string_view text)
{
    if (text.size() != 10 || text[0] != '0' || (text[1] != 'x' && text[1] != 'X')) {
        throw ModelIoError("float '" + std::string(text) + "' is not a 0x-prefixed 8-digit bit pattern");
    }
    std::uint32_t bits = 0;
    const auto [ptr, ec] = std::from_chars(text.data() + 2, text.data() + text.size(), bits, 16);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ModelIoError("float '" + std::string(text) + "' has invalid hex digits");
    }
    return std::bit_cast<float>(bits);
}

json parse_json_strict(const std::string& text, const std::string& source)
{
    std::vector<std::set<std::string>> keys;
    auto cb = [&](int, json::parse_event_t event, json& parsed) {
        switch (event) {
        case json::parse_event_t::object_start:
            keys.emplace_back();
            break;
        case json::parse_event_t::object_end:
            keys.pop_back();
            break;
        case json::parse_event_t::key: {
            const std::string k = parsed.get<std::string>();
            if (!keys.back().insert(k).second) throw DuplicateKeyError(source + ": duplicate key \"" + k + "\"");
            break;
        }
        default:
            break;
        }
        return true;
    };
    try {
        return json::parse(text, cb);
    } catch (const json::parse_error& e) {
        throw ModelIoError(source + ": malformed JSON: " + e.what());
    }
}

std::string read_text_file(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileAccessError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json read_json_file(const fs::path& path)
{
    return parse_json_strict(read_text_file(path), path.string());
}

void write_text_file(const fs::path& path, const std::string& text)
{
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileAccessError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw FileAccessError("write to '" + path.string() + "' failed");
}

Tensor read_blob(const fs::path& path, const Shape& shape)
{
    std::error_code ec;
    if (!fs::is_regular_file(path, ec)) throw MissingBlobError("tensor blob '" + path.string() + "' not found");
    const std::uintmax_t bytes = fs::file_size(path, ec);
    const std::size_t n = shape_numel(shape);
    if (ec || bytes != n * sizeof(float)) {
        throw BlobLengthError("tensor blob '" + path.string() + "' has " + std::to_string(bytes) + " bytes, shape " +
                              shape_to_string(shape) + " needs " + std::to_string(n * sizeof(float)));
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FileAccessError("cannot open '" + path.string() + "'");
    std::vector<std::uint32_t> raw(n);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(float)));
    if (!in) throw FileAccessError("short read from '" + path.string() + "'");
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::bit_cast<float>(to_little_endian(raw[i]));
    return t;
}

void write_blob(const fs::path& path, const Tensor& tensor)
{
    std::vector<std::uint32_t> raw(tensor.numel());
    for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = to_little_endian(std::bit_cast<std::uint32_t>(tensor[i]));
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FileAccessError("cannot write '" + path.string() + "'");
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(float)));
    if (!out) throw FileAccessError("write to '" + path.string() + "' failed");
}

Graph load_model(const fs::path& manifest_path)
{
    const json doc = read_json_file(manifest_path);
    const std::string src = "manifest";
    check_format(doc, kModelFormat, kModelFormatVersion, src);
    const fs::path base = manifest_path.parent_path();

    const Shape sample = shape_field(doc, "sample_shape", src);
    const std::size_t classes = unsigned_field(doc, "num_classes", src);
    const json& arr = field(doc, "layers", src);
    if (!arr.is_array()) throw FieldError(src + ".layers: expected an array");

    std::vector<Layer> layers;
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const json& lj = arr[i];
        const std::string where = src + ".layers[" + std::to_string(i) + "]";
        const std::string kind_name = string_field(lj, "kind", where);
        const auto kind = parse_layer_kind(kind_name);
        if (!kind) throw UnknownLayerKindError(where + ".kind: unknown layer kind '" + kind_name + "'");

        Layer l;
        l.kind = *kind;
        l.name = string_field(lj, "name", where);
        switch (l.kind) {
        case LayerKind::Conv2d:
            l.stride = unsigned_field_or(lj, "stride", where, 1);
            l.padding = unsigned_field_or(lj, "padding", where, 0);
            if (l.stride == 0) throw FieldError(where + ".stride: must be positive");
            [[fallthrough]];
        case LayerKind::Linear:
            l.weight = load_blob_ref(lj, "weight", where, base);
            if (lj.contains("bias")) l.bias = load_blob_ref(lj, "bias", where, base);
            break;
        case LayerKind::BatchNorm:
            l.bn.mean = load_blob_ref(lj, "mean", where, base);
            l.bn.var = load_blob_ref(lj, "var", where, base);
            l.bn.gamma = load_blob_ref(lj, "gamma", where, base);
            l.bn.beta = load_blob_ref(lj, "beta", where, base);
            l.bn.eps = lj.contains("eps") ? float_field(lj, "eps", where) : 1e-5f;
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            l.kernel = unsigned_field(lj, "kernel", where);
            l.stride = unsigned_field_or(lj, "stride", where, l.kernel);
            if (l.kernel == 0 || l.stride == 0) throw FieldError(where + ": kernel and stride must be positive");
            break;
        default:
            break;
        }
        layers.push_back(std::move(l));
    }
    Graph g(sample, classes, std::move(layers));
    g.validate();
    return g;
}

void save_model(const Graph& graph, const fs::path& manifest_path)
{
    const fs::path base = manifest_path.parent_path();
    json layers = json::array();
    for (const Layer& l : graph.layers()) {
        json lj{{"kind", std::string(layer_kind_name(l.kind))}, {"name", l.name}};
        switch (l.kind) {
        case LayerKind::Conv2d:
            lj["stride"] = l.stride;
            lj["padding"] = l.padding;
            [[fallthrough]];
        case LayerKind::Linear:
            lj["weight"] = blob_ref(l.weight, l.name + ".weight.bin", base);
            if (l.bias) lj["bias"] = blob_ref(l.bias, l.name + ".bias.bin", base);
            break;
        case LayerKind::BatchNorm:
            lj["mean"] = blob_ref(l.bn.mean, l.name + ".mean.bin", base);
            lj["var"] = blob_ref(l.bn.var, l.name + ".var.bin", base);
            lj["gamma"] = blob_ref(l.bn.gamma, l.name + ".gamma.bin", base);
            lj["beta"] = blob_ref(l.bn.beta, l.name + ".beta.bin", base);
            lj["eps"] = float_to_bits(l.bn.eps);
            break;
        case LayerKind::MaxPool:
        case LayerKind::AvgPool:
            lj["kernel"] = l.kernel;
            lj["stride"] = l.stride;
            break;
        default:
            break;
        }
        layers.push_back(std::move(lj));
    }
    const json doc{{"format", kModelFormat},
                   {"version", kModelFormatVersion},
                   {"sample_shape", graph.sample_shape()},
                   {"num_classes", graph.num_classes()},
                   {"layers", std::move(layers)}};
    write_text_file(manifest_path, doc.dump(2) + "\n");
}

Tensor CalibrationSet::batch(std::size_t begin, std::size_t end) const
{
    end = std::min(end, inputs.size());
    if (begin >= end) throw ShapeError("empty calibration batch");
    std::vector<const Tensor*> ptrs;
    for (std::size_t i = begin; i < end; ++i) ptrs.push_back(&inputs[i]);
    return stack_batch(std::span<const Tensor* const>(ptrs));
}

Tensor CalibrationSet::gather(std::span<const std::size_t> indices) const
{
    std::vector<const Tensor*> ptrs;
    for (std::size_t i : indices) ptrs.push_back(&inputs.at(i));
    return stack_batch(std::span<const Tensor* const>(ptrs));
}

std::vector<int> CalibrationSet::gather_labels(std::span<const std::size_t> indices) const
{
    std::vector<int> out;
    for (std::size_t i : indices) out.push_back(labels.at(i));
    return out;
}

CalibrationSet load_calibration(const fs::path& dir, std::size_t limit, const Shape& sample_shape,
                                std::size_t num_classes)
{
    const fs::path index = dir / "index.csv";
    std::ifstream in(index);
    if (!in) throw FileAccessError("cannot open '" + index.string() + "'");

    CalibrationSet set;
    set.sample_shape = sample_shape;
    std::string line;
    std::size_t row = 0;
    if (!std::getline(in, line)) throw CsvRowError(index.string(), 1, "missing header");
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "blob,label") throw CsvRowError(index.string(), row, "header must be 'blob,label'");

    while (set.size() < limit && std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
            throw CsvRowError(index.string(), row, "expected 2 comma-separated fields");
        }
        const std::string blob = line.substr(0, comma);
        const std::string label_text = line.substr(comma + 1);
        if (blob.empty()) throw CsvRowError(index.string(), row, "empty blob path");
        int label = 0;
        const auto [ptr, ec] = std::from_chars(label_text.data(), label_text.data() + label_text.size(), label);
        if (ec != std::errc{} || ptr != label_text.data() + label_text.size() || label < 0) {
            throw CsvRowError(index.string(), row, "label '" + label_text + "' is not a non-negative integer");
        }
        if (num_classes > 0 && static_cast<std::size_t>(label) >= num_classes) {
            throw CsvRowError(index.string(), row, "label " + label_text + " out of range for " + std::to_string(num_classes) +
                                         " classes");
        }
        set.inputs.push_back(read_blob(dir / blob, sample_shape));
        set.labels.push_back(label);
    }
    return set;
}

void save_calibration(const CalibrationSet& set, const fs::path& dir)
{
    fs::create_directories(dir);
    std::ostringstream index;
    index << "blob,label\n";
    for (std::size_t i = 0; i < set.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05zu.bin", i);
        write_blob(dir / name, set.inputs[i]);
        index << name << ',' << set.labels[i] << '\n';
    }
    write_text_file(dir / "index.csv", index.str());
}

json quant_params_to_json(const QuantParams& p)
{
    return json{{"threshold", float_to_bits(p.threshold)},
                {"scale", float_to_bits(p.scale)},
                {"zero_point", p.zero_point},
                {"qmin", p.qmin},
                {"qmax", p.qmax},
                {"bits", p.bits},
                {"degenerate", p.degenerate}};
}

QuantParams quant_params_from_json(const json& j, const std::string& where)
{
    QuantParams p;
    p.threshold = float_field(j, "threshold", where);
    p.scale = float_field(j, "scale", where);
    p.zero_point = int_field(j, "zero_point", where);
    p.qmin = int_field(j, "qmin", where);
    p.qmax = int_field(j, "qmax", where);
    p.bits = int_field(j, "bits", where);
    const json& deg = field(j, "degenerate", where);
    if (!deg.is_boolean()) throw FieldError(where + ".degenerate: expected a boolean");
    p.degenerate = deg.get<bool>();
    try {
        p.validate();
    } catch (const QuantError& e) {
        throw FieldError(where + ": " + e.what());
    }
    return p;
}

std::string serialize_qparams(const QParamTable& table)
{
    json layers = json::object();
    for (const auto& [name, strategies] : table) {
        json sj = json::object();
        for (const auto& [kind, sp] : strategies) {
            sj[std::string(calibrator_name(kind))] =
                json{{"activation", quant_params_to_json(sp.activation)}, {"weight", quant_params_to_json(sp.weight)}};
        }
        layers[name] = std::move(sj);
    }
    const json doc{{"format", kQParamsFormat}, {"version", kQParamsFormatVersion}, {"layers", std::move(layers)}};
    return doc.dump(2) + "\n";
}

QParamTable parse_qparams(const std::string& text, const std::string& source)
{
    const json doc = parse_json_strict(text, source);
    check_format(doc, kQParamsFormat, kQParamsFormatVersion, source);
    const json& layers = field(doc, "layers", source);
    if (!layers.is_object()) throw FieldError(source + ".layers: expected an object");

    QParamTable table;
    for (const auto& [name, sj] : layers.items()) {
        const std::string lw = source + ".layers." + name;
        if (!sj.is_object()) throw FieldError(lw + ": expected an object");
        auto& entry = table[name];
        for (const auto& [sname, pj] : sj.items()) {
            const auto kind = parse_calibrator(sname);
            if (!kind) throw UnknownStrategyError(lw + ": unknown strategy '" + sname + "'");
            const std::string w = lw + "." + sname;
            entry[*kind] = StrategyParams{quant_params_from_json(field(pj, "activation", w), w + ".activation"),
                                          quant_params_from_json(field(pj, "weight", w), w + ".weight")};
        }
    }
    return table;
}

void save_qparams(const QParamTable& table, const fs::path& path)
{
    write_text_file(path, serialize_qparams(table));
}

QParamTable load_qparams(const fs::path& path)
{
    return parse_qparams(read_text_file(path), path.string());
}

} // namespace dqss
