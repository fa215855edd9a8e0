// SPDX-License-Identifier: Apache-2.0
#include "dqss/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace dqss {

std::size_t shape_numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_numel(shape_), fill)
{
}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data))
{
    if (shape_numel(shape_) != data_.size()) {
        throw ShapeError("tensor shape " + shape_to_string(shape_) + " holds " +
                         std::to_string(shape_numel(shape_)) + " values, got " +
                         std::to_string(data_.size()));
    }
}

float Tensor::item() const
{
    if (data_.size() != 1) {
        throw ShapeError("item() on tensor of shape " + shape_to_string(shape_));
    }
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const
{
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

std::span<const float> Tensor::grad() const
{
    if (!grad_) throw std::logic_error("tensor has no gradient");
    return *grad_;
}

std::span<float> Tensor::grad_mut()
{
    if (!grad_) throw std::logic_error("tensor has no gradient");
    return *grad_;
}

std::span<float> Tensor::ensure_grad()
{
    if (!grad_) grad_.emplace(data_.size(), 0.0f);
    return *grad_;
}

void Tensor::zero_grad()
{
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0f);
}

bool Tensor::all_finite() const noexcept
{
    for (float v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void check_same_shape(const Shape& a, const Shape& b, const char* what)
{
    if (a != b) {
        throw ShapeError(std::string(what) + ": shape " + shape_to_string(a) + " vs " + shape_to_string(b));
    }
}

} // namespace dqss
