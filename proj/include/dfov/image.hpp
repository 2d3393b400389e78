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

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace dfov {

/// Interleaved 8-bit RGB, row-major. Pixel (x, y) channel c lives at
/// `3 * (y * width + x) + c`.
class RgbImage {
 public:
  using Plane = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using ConstChannelMap =
      Eigen::Map<const Plane, Eigen::Unaligned, Eigen::Stride<Eigen::Dynamic, 3>>;
  using ChannelMap = Eigen::Map<Plane, Eigen::Unaligned, Eigen::Stride<Eigen::Dynamic, 3>>;

  RgbImage() = default;
  RgbImage(int width, int height, std::uint8_t fill = 0);
  RgbImage(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_) * static_cast<std::size_t>(height_);
  }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::span<std::uint8_t> bytes() noexcept { return data_; }
  const std::uint8_t* row(int y) const noexcept { return data_.data() + offset(0, y); }
  std::uint8_t* row(int y) noexcept { return data_.data() + offset(0, y); }

  std::uint8_t at(int x, int y, int c) const noexcept { return data_[offset(x, y) + c]; }
  std::uint8_t& at(int x, int y, int c) noexcept { return data_[offset(x, y) + c]; }

  ConstChannelMap channel(int c) const {
    return {data_.data() + c, height_, width_, Eigen::Stride<Eigen::Dynamic, 3>(3 * width_, 3)};
  }
  ChannelMap channel(int c) {
    return {data_.data() + c, height_, width_, Eigen::Stride<Eigen::Dynamic, 3>(3 * width_, 3)};
  }

  /// Changes dimensions keeping the allocation when it is large enough.
  /// Pixel values are unspecified afterwards.
  void resize(int width, int height);

  void fill_rect(int x0, int y0, int x1, int y1, std::uint8_t r, std::uint8_t g, std::uint8_t b);

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t offset(int x, int y) const noexcept {
    return 3 * (static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
                static_cast<std::size_t>(x));
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Rec. 601 luma as a height x width array.
Eigen::ArrayXXd luminance(const RgbImage& image);

/// Channel map of bit-depth reduction: round(round(v / s) * s), s = 255 / (2^depth - 1).
std::array<std::uint8_t, 256> quantization_lut(int depth);

inline int clamp_index(int i, int n) noexcept { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

}  // namespace dfov
