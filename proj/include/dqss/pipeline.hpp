// SPDX-License-Identifier: Apache-2.0
//
// Batch pipeline behind the `dqss` executable.
//
// Configuration file: one `key = value` per line, `#` starts a comment,
// blank lines are ignored, a key may appear once. Keys are the long flag
// names without the leading dashes (hyphens or underscores both accepted).
// Precedence, lowest first: built-in defaults, config file, command-line flags.
//
//   key           type                 default
//   model         path                 (required by most commands)
//   data          directory            (calibration / training samples)
//   eval-data     directory            value of `data`
//   qparams       path                 <out>/qparams.json
//   assignment    path                 <out>/assignment.json
//   resume        checkpoint directory (none)
//   out           directory            .
//   pool          comma list           maxabs,kl,eq,admm  (qat-train: dorefa,pact,lsq)
//   bits          integer 2..8         8
//   seed          unsigned integer     42
//   epochs        integer              search 3, qat-train 50
//   lr            real                 1e-4 (importance parameters and quantizer scalars)
//   lr-weight     real                 1e-3 (qat-train weights)
//   decay-epochs  comma list           search 2,3; qat-train none
//   decay-factor  real                 0.1
//   batch-size    integer              search max(1, n/8); qat-train 32
//   limit         integer              0 (all samples)
//   loss          ce | mse             ce
//   uniform-theta bool                 false
//   threads       integer              0 (OpenMP default)
//   toy           bars | moons         bars
//
// Exit codes: 0 success, 2 usage, 3 file access, 4 validation,
// 5 numerical failure, 1 anything else.
#pragma once

#include "dqss/search.hpp"

#include <cstddef>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dqss::pipeline {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration value or inconsistent inputs.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ExitCode : int { Ok = 0, Other = 1, Usage = 2, Io = 3, Validation = 4, Numerical = 5 };

ExitCode exit_code_for(const std::exception& e);

struct PipelineConfig {
    fs::path model;
    fs::path data;
    fs::path eval_data;
    fs::path qparams;
    fs::path assignment;
    fs::path resume;
    fs::path out = ".";
    std::vector<std::string> pool;
    int bits = 8;
    std::uint64_t seed = 42;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    double lr_weight = 1e-3;
    std::optional<std::vector<std::size_t>> decay_epochs;
    double decay_factor = 0.1;
    std::size_t batch_size = 0;
    std::size_t limit = 0;
    SearchLoss loss = SearchLoss::CrossEntropy;
    bool uniform_theta = false;
    int threads = 0;
    std::string toy = "bars";

    fs::path qparams_path() const { return qparams.empty() ? out / "qparams.json" : qparams; }
    fs::path assignment_path() const { return assignment.empty() ? out / "assignment.json" : assignment; }
    fs::path eval_data_path() const { return eval_data.empty() ? data : eval_data; }
};

/// Keys accepted by the config file, in canonical (hyphenated) spelling.
const std::vector<std::string>& config_keys();

/// Parses config-file text into key -> value; throws ConfigError with the
/// line number on malformed lines, unknown keys and duplicates.
std::map<std::string, std::string> parse_config_text(const std::string& text, const std::string& source);

/// Sets one key; throws ConfigError naming the key on a bad value.
void apply_config_value(PipelineConfig& cfg, const std::string& key, const std::string& value);

/// Defaults, overridden by config-file values, overridden by flag values.
PipelineConfig resolve_config(const std::map<std::string, std::string>& file_values,
                              const std::vector<std::pair<std::string, std::string>>& flag_values);

/// Checks cross-field invariants (bits range, pool deduplicated).
void validate_config(const PipelineConfig& cfg);

std::vector<CalibratorKind> ptq_pool(const PipelineConfig& cfg);

/// Writes <out>/qparams.json.
void run_calibrate(const PipelineConfig& cfg, std::ostream& log);
/// Writes assignment.json, theta_trace.csv and distribution.csv under <out>
/// and prints the distribution table to `out`.
void run_search(const PipelineConfig& cfg, std::ostream& out, std::ostream& log);
/// Writes <out>/eval.csv (variant,top1,loss) and echoes it to `out`.
void run_eval(const PipelineConfig& cfg, std::ostream& out, std::ostream& log);
/// Writes <out>/checkpoint/, qat_trace.csv, qat_assignment.json and qat_eval.csv.
void run_qat_train(const PipelineConfig& cfg, std::ostream& out, std::ostream& log);
/// Prints the per-strategy distribution of an assignment and writes distribution.csv.
void run_report(const PipelineConfig& cfg, std::ostream& out);
/// Writes a pretrained toy model and its data splits under <out>.
void run_make_toy(const PipelineConfig& cfg, std::ostream& log);

/// Machine-parsable progress line (no trailing newline).
std::string epoch_line(const EpochReport& r);

} // namespace dqss::pipeline
