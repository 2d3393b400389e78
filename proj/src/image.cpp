/*
 * Copyright (c) 2026, The dfov Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dfov/image.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "dfov/errors.hpp"

namespace dfov {

RgbImage::RgbImage(int width, int height, std::uint8_t fill)
    : width_(width), height_(height) {
  if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
  data_.assign(3 * pixel_count(), fill);
}

RgbImage::RgbImage(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), data_(std::move(pixels)) {
  if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
  if (data_.size() != 3 * pixel_count())
    throw ValidationError("pixel buffer length must equal width * height * 3");
}

void RgbImage::resize(int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("image dimensions must be positive");
  width_ = width;
  height_ = height;
  data_.resize(3 * pixel_count());
}

void RgbImage::fill_rect(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g,
                         std::uint8_t b) {
  x0 = std::max(x0, 0);
  y0 = std::max(y0, 0);
  x1 = std::min(x1, width_);
  y1 = std::min(y1, height_);
  for (int y = y0; y < y1; ++y) {
    for (int x = x0; x < x1; ++x) {
      at(x, y, 0) = r;
      at(x, y, 1) = g;
      at(x, y, 2) = b;
    }
  }
}

Eigen::ArrayXXd luminance(const RgbImage& image) {
  return 0.299 * image.channel(0).cast<double>().array() +
         0.587 * image.channel(1).cast<double>().array() +
         0.114 * image.channel(2).cast<double>().array();
}

std::array<std::uint8_t, 256> quantization_lut(int depth) {
  if (depth < 1 || depth > 8) throw ValidationError(fmt::format("bit depth {} outside [1, 8]", depth));
  const double step = 255.0 / ((1 << depth) - 1);
  std::array<std::uint8_t, 256> lut{};
  for (int v = 0; v < 256; ++v) {
    const double q = std::round(v / step) * step;
    lut[static_cast<std::size_t>(v)] = static_cast<std::uint8_t>(std::clamp(std::lround(q), 0L, 255L));
  }
  return lut;
}

}  // namespace dfov
