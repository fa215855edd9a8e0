// SPDX-License-Identifier: Apache-2.0
//
// Synthetic desk-scale datasets and models.
#pragma once

#include "dqss/graph.hpp"
#include "dqss/model_io.hpp"

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace dqss::toy {

struct BarImageOptions {
    std::size_t size = 12;
    float noise = 0.3f;
    /// Per-pixel probability of an outlier spike.
    float outlier_rate = 0.001f;
    float outlier_low = 20.0f;
    float outlier_high = 40.0f;
};

/// 1 x size x size images of a bar in one of four orientations (the label),
/// with Gaussian noise and rare large-magnitude spikes of random sign.
CalibrationSet bar_images(std::size_t n, std::uint64_t seed, const BarImageOptions& opt = {});

/// conv 1->8 (3x3, pad 1), relu, conv 8->16 (3x3, stride 2, pad 1), relu,
/// global average pool, flatten, linear 16 -> 4. He-initialized.
Graph bar_cnn(std::uint64_t seed, std::size_t image_size = 12);

struct MoonsOptions {
    float noise = 0.15f;
    float pixel_sigma = 0.6f;
};

/// Two interleaved half circles rendered as non-negative 1x4x4 images of
/// Gaussian bumps centred on a fixed grid.
CalibrationSet moons_images(std::size_t n, std::uint64_t seed, const MoonsOptions& opt = {});

/// flatten, linear 16->32, relu, linear 32->2. He-initialized.
Graph moons_mlp(std::uint64_t seed, std::size_t hidden = 32);

/// A pretrained FP32 model with its data splits. Everything is a pure
/// function of the fixed seeds inside the builder.
struct Benchmark {
    Graph model;
    CalibrationSet train;
    CalibrationSet calib;
    CalibrationSet eval;
};

/// bar_cnn trained 30 epochs (lr 0.02) on 2000 bar images; 256 calibration
/// and 1000 evaluation images.
Benchmark bar_benchmark();
/// moons_mlp trained 100 epochs (lr 0.1) on 1000 samples; calib is the
/// first 256 training samples, 1000 evaluation samples.
Benchmark moons_benchmark();
/// "bars" or "moons"; throws std::invalid_argument otherwise.
Benchmark benchmark_by_name(std::string_view name);

} // namespace dqss::toy
