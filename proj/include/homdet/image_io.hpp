// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "homdet/tensor.hpp"

namespace homdet {

/// 8-bit interleaved RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // height * width * 3

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}
  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }
};

/// Reads 8-bit RGB/RGBA/gray PNGs (alpha dropped, gray expanded).
RgbImage read_png(const std::string& path);
/// Deterministic output: fixed compression level and filter.
void write_png(const std::string& path, const RgbImage& image);

/// [3, H, W] in [0, 1].
Tensor to_tensor(const RgbImage& image);
/// Accepts [3, H, W] or [1, 3, H, W]; values are clamped and rounded.
RgbImage from_tensor(const Tensor& t);

}  // namespace homdet
