// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats
// ---------------
// Model manifest (JSON):
//   { "format": "dqss-model", "version": 1, "sample_shape": [C, H, W],
//     "num_classes": K, "layers": [ { "kind": "conv2d", "name": "conv1",
//       "stride": 1, "padding": 1,
//       "weight": {"file": "conv1.weight.bin", "shape": [O, C, Kh, Kw]},
//       "bias":   {"file": "conv1.bias.bin", "shape": [O]} }, ... ] }
//   batchnorm layers carry "mean"/"var"/"gamma"/"beta" blob refs and "eps";
//   pooling layers carry "kernel"/"stride".
// Tensor blobs: headerless little-endian float32, row-major; shape lives in
//   the manifest and byte length must equal 4 * product(shape).
// Calibration directory: index.csv with header "blob,label", one row per
//   sample; blob paths are relative to the directory.
// Quantization params (JSON): { "format": "dqss-qparams", "version": 1,
//   "layers": { name: { strategy: { "activation": P, "weight": P } } } }
//   with P = { "threshold": "0x3f800000", "scale": "0x...", "zero_point": 0,
//   "qmin": -127, "qmax": 127, "bits": 8, "degenerate": false }.
// Every float in a JSON file is written as its raw IEEE-754 bit pattern
// ("0x" + 8 hex digits) so round trips are bit-exact. Keys are emitted in
// sorted order and duplicate keys are rejected on load.
#pragma once

#include "dqss/calibrators.hpp"
#include "dqss/graph.hpp"
#include "dqss/tensor.hpp"

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace dqss {

namespace fs = std::filesystem;

class ModelIoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
/// File could not be opened or read.
class FileAccessError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
class MissingBlobError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
class BlobLengthError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
class UnknownLayerKindError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
class VersionMismatchError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// A required field is absent or has the wrong type/value; the message names it.
class FieldError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
class DuplicateKeyError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
class UnknownStrategyError : public ModelIoError {
public:
    using ModelIoError::ModelIoError;
};
/// A CSV row is malformed; row() is the 1-based line number.
class CsvRowError : public ModelIoError {
public:
    CsvRowError(const std::string& file, std::size_t row, const std::string& what);
    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

constexpr int kModelFormatVersion = 1;
constexpr int kQParamsFormatVersion = 1;

std::string float_to_bits(float v);
float float_from_bits(std::string_view text);

/// Parses JSON, rejecting duplicate object keys at any depth.
nlohmann::json parse_json_strict(const std::string& text, const std::string& source);
nlohmann::json read_json_file(const fs::path& path);
/// Writes pretty-printed JSON with a trailing newline.
void write_text_file(const fs::path& path, const std::string& text);
std::string read_text_file(const fs::path& path);

Tensor read_blob(const fs::path& path, const Shape& shape);
void write_blob(const fs::path& path, const Tensor& tensor);

Graph load_model(const fs::path& manifest_path);
/// Writes the manifest plus one blob per parameter tensor beside it.
void save_model(const Graph& graph, const fs::path& manifest_path);

struct CalibrationSet {
    Shape sample_shape;
    std::vector<Tensor> inputs;
    std::vector<int> labels;

    std::size_t size() const noexcept { return inputs.size(); }
    bool empty() const noexcept { return inputs.empty(); }
    /// Samples [begin, end) stacked into one batch.
    Tensor batch(std::size_t begin = 0, std::size_t end = static_cast<std::size_t>(-1)) const;
    Tensor gather(std::span<const std::size_t> indices) const;
    std::vector<int> gather_labels(std::span<const std::size_t> indices) const;
};

/// Loads the first `limit` rows of dir/index.csv (all rows if fewer).
/// num_classes == 0 skips the label range check.
CalibrationSet load_calibration(const fs::path& dir, std::size_t limit, const Shape& sample_shape,
                                std::size_t num_classes = 0);
void save_calibration(const CalibrationSet& set, const fs::path& dir);

nlohmann::json quant_params_to_json(const QuantParams& p);
QuantParams quant_params_from_json(const nlohmann::json& j, const std::string& where);

std::string serialize_qparams(const QParamTable& table);
QParamTable parse_qparams(const std::string& text, const std::string& source = "<qparams>");
void save_qparams(const QParamTable& table, const fs::path& path);
QParamTable load_qparams(const fs::path& path);

} // namespace dqss
