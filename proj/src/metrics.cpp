// SPDX-License-Identifier: Apache-2.0
#include "dqss/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dqss {

namespace {

void check_logits(const Tensor& logits, std::size_t labels)
{
    if (logits.rank() != 2) throw ShapeError("logits must be [N, K], got " + shape_to_string(logits.shape()));
    if (logits.dim(0) != labels) {
        throw ShapeError("logits have " + std::to_string(logits.dim(0)) + " rows for " + std::to_string(labels) +
                         " labels");
    }
}

} // namespace

std::vector<int> predict_classes(const Tensor& logits)
{
    check_logits(logits, logits.rank() == 2 ? logits.dim(0) : 0);
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.data().subspan(i * k, k);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

double top1_accuracy(const Tensor& logits, std::span<const int> labels)
{
    check_logits(logits, labels.size());
    if (labels.empty()) return 0.0;
    const auto pred = predict_classes(logits);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean_cross_entropy(const Tensor& logits, std::span<const int> labels)
{
    check_logits(logits, labels.size());
    if (labels.empty()) return 0.0;
    const std::size_t k = logits.dim(1);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto row = logits.data().subspan(i * k, k);
        const double m = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (float v : row) z += std::exp(static_cast<double>(v) - m);
        total += m + std::log(z) - static_cast<double>(row[static_cast<std::size_t>(labels[i])]);
    }
    return total / static_cast<double>(labels.size());
}

} // namespace dqss
