// SPDX-License-Identifier: Apache-2.0
//
// Assignment file (JSON):
//   { "format": "dqss-assignment", "version": 1,
//     "layers": { "conv1": { "act": "kl", "weight": "admm" }, ... } }
// θ-trace CSV: header "epoch,layer,tensor_class,strategy,theta"; tensor_class
//   is "activation" or "weight"; theta printed with 9 significant digits
//   (round-trips float exactly).
// Distribution CSV: header "tensor_class,strategy,count".
#pragma once

#include "dqss/model_io.hpp"
#include "dqss/search.hpp"

#include <filesystem>
#include <map>
#include <utility>
#include <string>
#include <vector>

namespace dqss {

constexpr int kAssignmentFormatVersion = 1;

/// Layer name -> (activation strategy name, weight strategy name).
using NamedAssignment = std::map<std::string, std::pair<std::string, std::string>>;
std::string serialize_named_assignment(const NamedAssignment& a);
NamedAssignment parse_named_assignment(const std::string& text, const std::string& source);

std::string serialize_assignment(const Assignment& a);
Assignment parse_assignment(const std::string& text, const std::string& source = "<assignment>");
void save_assignment(const Assignment& a, const fs::path& path);
Assignment load_assignment(const fs::path& path);

struct ThetaTraceRow {
    std::size_t epoch = 0;
    std::string layer;
    QuantTarget tensor_class = QuantTarget::Activation;
    std::string strategy;
    float theta = 0.0f;
    friend bool operator==(const ThetaTraceRow&, const ThetaTraceRow&) = default;
};

std::vector<ThetaTraceRow> theta_trace_rows(const std::vector<ThetaSnapshot>& snapshots,
                                            const std::vector<std::string>& layers,
                                            const std::vector<std::string>& strategies);
std::vector<ThetaTraceRow> theta_trace_rows(const std::vector<ThetaSnapshot>& snapshots, const ThetaState& layout);
std::string serialize_theta_trace(const std::vector<ThetaTraceRow>& rows);
std::vector<ThetaTraceRow> parse_theta_trace(const std::string& text);

std::string serialize_distribution(const StrategyDistribution& d);
/// Human-readable table: one row per strategy with activation and weight counts.
std::string format_distribution_table(const StrategyDistribution& d);

std::string_view tensor_class_name(QuantTarget t);

} // namespace dqss
