// SPDX-License-Identifier: Apache-2.0
#include "dqss/toy.hpp"

#include "dqss/qat.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>

namespace dqss::toy {

namespace {

TensorPtr he_normal(Shape shape, std::size_t fan_in, std::mt19937_64& rng)
{
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(fan_in)));
    Tensor t(std::move(shape));
    for (float& v : t.storage()) v = dist(rng);
    return make_param(std::move(t), false);
}

TensorPtr zeros(std::size_t n)
{
    return make_param(Tensor(Shape{n}), false);
}

Layer conv(std::string name, std::size_t in, std::size_t out, std::size_t stride, std::mt19937_64& rng)
{
    Layer l;
    l.kind = LayerKind::Conv2d;
    l.name = std::move(name);
    l.weight = he_normal({out, in, 3, 3}, in * 9, rng);
    l.bias = zeros(out);
    l.stride = stride;
    l.padding = 1;
    return l;
}

Layer linear(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng)
{
    Layer l;
    l.kind = LayerKind::Linear;
    l.name = std::move(name);
    l.weight = he_normal({out, in}, in, rng);
    l.bias = zeros(out);
    return l;
}

Layer simple(LayerKind kind, std::string name)
{
    Layer l;
    l.kind = kind;
    l.name = std::move(name);
    return l;
}

} // namespace

CalibrationSet bar_images(std::size_t n, std::uint64_t seed, const BarImageOptions& opt)
{
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> label_dist(0, 3);
    std::uniform_int_distribution<int> offset_dist(-2, 2);
    std::uniform_real_distribution<float> amp_dist(0.6f, 1.4f);
    std::uniform_real_distribution<float> unit(0.0f, 1.0f);
    std::uniform_real_distribution<float> spike(opt.outlier_low, opt.outlier_high);
    std::normal_distribution<float> noise(0.0f, opt.noise);

    const int s = static_cast<int>(opt.size);
    const int c = s / 2;
    CalibrationSet set;
    set.sample_shape = {1, opt.size, opt.size};
    for (std::size_t k = 0; k < n; ++k) {
        const int label = label_dist(rng);
        const int off = offset_dist(rng);
        const float amp = amp_dist(rng);
        Tensor img(set.sample_shape);
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                bool on = false;
                switch (label) {
                case 0: on = std::abs(y - (c + off)) <= 1; break;
                case 1: on = std::abs(x - (c + off)) <= 1; break;
                case 2: on = std::abs((x - y) - off) <= 1; break;
                default: on = std::abs((x + y) - (s - 1 + off)) <= 1; break;
                }
                float v = (on ? amp : 0.0f) + noise(rng);
                if (unit(rng) < opt.outlier_rate) v = (unit(rng) < 0.5f ? -1.0f : 1.0f) * spike(rng);
                img[static_cast<std::size_t>(y * s + x)] = v;
            }
        }
        set.inputs.push_back(std::move(img));
        set.labels.push_back(label);
    }
    return set;
}

Graph bar_cnn(std::uint64_t seed, std::size_t image_size)
{
    std::mt19937_64 rng(seed);
    const std::size_t half = (image_size + 1) / 2;
    std::vector<Layer> layers;
    layers.push_back(conv("conv1", 1, 8, 1, rng));
    layers.push_back(simple(LayerKind::ReLU, "relu1"));
    layers.push_back(conv("conv2", 8, 16, 2, rng));
    layers.push_back(simple(LayerKind::ReLU, "relu2"));
    Layer gap = simple(LayerKind::AvgPool, "gap");
    gap.kernel = half;
    gap.stride = half;
    layers.push_back(std::move(gap));
    layers.push_back(simple(LayerKind::Flatten, "flatten"));
    layers.push_back(linear("fc", 16, 4, rng));
    Graph g({1, image_size, image_size}, 4, std::move(layers));
    g.validate();
    return g;
}

CalibrationSet moons_images(std::size_t n, std::uint64_t seed, const MoonsOptions& opt)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<float> angle(0.0f, std::numbers::pi_v<float>);
    std::normal_distribution<float> noise(0.0f, opt.noise);

    CalibrationSet set;
    set.sample_shape = {1, 4, 4};
    const float inv = 1.0f / (2.0f * opt.pixel_sigma * opt.pixel_sigma);
    for (std::size_t k = 0; k < n; ++k) {
        const int label = static_cast<int>(k % 2);
        const float t = angle(rng);
        float px = label == 0 ? std::cos(t) : 1.0f - std::cos(t);
        float py = label == 0 ? std::sin(t) : 0.5f - std::sin(t);
        px += noise(rng);
        py += noise(rng);
        Tensor img(set.sample_shape);
        for (int gy = 0; gy < 4; ++gy) {
            for (int gx = 0; gx < 4; ++gx) {
                const float cx = -1.0f + static_cast<float>(gx);      // -1 .. 2
                const float cy = -0.75f + 0.75f * static_cast<float>(gy); // -0.75 .. 1.5
                const float d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
                img[static_cast<std::size_t>(gy * 4 + gx)] = std::exp(-d2 * inv);
            }
        }
        set.inputs.push_back(std::move(img));
        set.labels.push_back(label);
    }
    return set;
}

Graph moons_mlp(std::uint64_t seed, std::size_t hidden)
{
    std::mt19937_64 rng(seed);
    std::vector<Layer> layers;
    layers.push_back(simple(LayerKind::Flatten, "flatten"));
    layers.push_back(linear("fc1", 16, hidden, rng));
    layers.push_back(simple(LayerKind::ReLU, "relu1"));
    layers.push_back(linear("fc2", hidden, 2, rng));
    Graph g({1, 4, 4}, 2, std::move(layers));
    g.validate();
    return g;
}

Benchmark bar_benchmark()
{
    Benchmark b{bar_cnn(7), bar_images(2000, 1), bar_images(256, 2), bar_images(1000, 3)};
    FloatTrainConfig cfg;
    cfg.epochs = 30;
    cfg.lr = 0.02;
    train_float(b.model, b.train, cfg);
    b.model.set_trainable(false);
    return b;
}

Benchmark moons_benchmark()
{
    Benchmark b{moons_mlp(5), moons_images(1000, 11), {}, moons_images(1000, 12)};
    b.calib.sample_shape = b.train.sample_shape;
    b.calib.inputs.assign(b.train.inputs.begin(), b.train.inputs.begin() + 256);
    b.calib.labels.assign(b.train.labels.begin(), b.train.labels.begin() + 256);
    FloatTrainConfig cfg;
    cfg.epochs = 100;
    cfg.lr = 0.1;
    train_float(b.model, b.train, cfg);
    b.model.set_trainable(false);
    return b;
}

Benchmark benchmark_by_name(std::string_view name)
{
    if (name == "bars") return bar_benchmark();
    if (name == "moons") return moons_benchmark();
    throw std::invalid_argument("unknown toy benchmark '" + std::string(name) + "' (expected bars or moons)");
}

} // namespace dqss::toy
