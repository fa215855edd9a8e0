// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dqss {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Raised when tensor shapes disagree. The message names the offending axes.
class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major float tensor with an optional gradient buffer.
///
/// Parameters that the optimizer updates are held through TensorPtr so the
/// autodiff tape can accumulate into their grad slot.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t numel() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float item() const;

    /// Same data, new shape; product must match.
    Tensor reshaped(Shape shape) const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on) { requires_grad_ = on; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::span<const float> grad() const;
    std::span<float> grad_mut();
    /// Allocates a zeroed grad buffer when absent.
    std::span<float> ensure_grad();
    void zero_grad();
    void clear_grad() { grad_.reset(); }

    bool all_finite() const noexcept;

private:
    Shape shape_;
    std::vector<float> data_;
    bool requires_grad_ = false;
    std::optional<std::vector<float>> grad_;
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_param(Tensor t, bool requires_grad = true)
{
    auto p = std::make_shared<Tensor>(std::move(t));
    p->set_requires_grad(requires_grad);
    return p;
}

/// Integer codes produced by quantize().
struct IntTensor {
    Shape shape;
    std::vector<std::int32_t> data;
};

void check_same_shape(const Shape& a, const Shape& b, const char* what);

} // namespace dqss
