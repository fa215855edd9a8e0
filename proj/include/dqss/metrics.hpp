// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "dqss/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace dqss {

/// Row-wise argmax of an [N, K] logit matrix; ties go to the lowest class.
std::vector<int> predict_classes(const Tensor& logits);
/// Fraction of rows whose argmax equals the label, in [0, 1].
double top1_accuracy(const Tensor& logits, std::span<const int> labels);
/// Mean softmax cross-entropy, accumulated in double.
double mean_cross_entropy(const Tensor& logits, std::span<const int> labels);

} // namespace dqss
