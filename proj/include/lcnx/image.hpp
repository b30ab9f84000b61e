// Copyright 2026 The lcnx Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "lcnx/ndarray.hpp"

namespace lcnx {

/// 8-bit RGB image, interleaved rows.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb;
};

/// Binary PPM (P6, maxval 255).
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Binary PGM (P5, maxval 255) from a row-major buffer.
void write_pgm(const std::filesystem::path& path, int width, int height, const std::vector<std::uint8_t>& gray);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, int& width, int& height);

/// Dispatches on the extension; only .ppm is supported.
Image decode_image(const std::filesystem::path& path);
bool is_supported_image(const std::filesystem::path& path);

/// [3, H, W] float planes holding raw 0..255 values.
NdArray<float> to_planar(const Image& image);

/// Bilinear resampling with half-pixel centers (edge-clamped).
NdArray<float> resize_bilinear(const NdArray<float>& chw, std::size_t out_h, std::size_t out_w);

/// Mirrors the width axis.
NdArray<float> hflip(const NdArray<float>& chw);

/// Rotation about the image center, bilinear sampling, reflect padding.
NdArray<float> rotate(const NdArray<float>& chw, double degrees);

/// (x / 255 - mean) / std per channel.
NdArray<float> normalize(const NdArray<float>& chw, const std::array<float, 3>& mean, const std::array<float, 3>& stddev);
NdArray<float> denormalize(const NdArray<float>& chw, const std::array<float, 3>& mean,
                           const std::array<float, 3>& stddev);

} // namespace lcnx
