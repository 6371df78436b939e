#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "e3cm/error.hpp"

namespace e3cm {

// Three-channel RGB image with samples in [0, 1], row-major, interleaved.
struct Image {
  static constexpr int channels = 3;
  static constexpr int min_size = 16;

  int width = 0;
  int height = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h) : width(w), height(h), data(static_cast<std::size_t>(w) * h * channels, 0.0f) {}

  static Image from_rgb8(int w, int h, std::span<const std::uint8_t> rgb) {
    Image img(w, h);
    if (rgb.size() != img.data.size()) {
      throw Error(ErrorCode::InvalidArgument, "rgb buffer size does not match image dimensions");
    }
    for (std::size_t i = 0; i < rgb.size(); ++i) img.data[i] = static_cast<float>(rgb[i]) / 255.0f;
    return img;
  }

  float& at(int x, int y, int c) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  void validate() const {
    if (width < min_size || height < min_size) {
      throw Error(ErrorCode::ImageTooSmall, "image is " + std::to_string(width) + "x" + std::to_string(height) +
                                                ", minimum is 16x16");
    }
    if (data.size() != static_cast<std::size_t>(width) * height * channels) {
      throw Error(ErrorCode::InvalidArgument, "image data length does not match its dimensions");
    }
  }
};

}  // namespace e3cm
