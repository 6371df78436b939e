#pragma once

// Image file I/O through OpenCV's codecs (PNG, PPM/PGM, JPEG, ...).

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>

#include "e3cm/error.hpp"
#include "e3cm/image.hpp"

namespace e3cm {

// Loads any image OpenCV can decode as 8-bit RGB; grayscale files are
// replicated across channels.
inline Image load_image(const std::filesystem::path& path) {
  cv::Mat m;
  try {
    m = cv::imread(path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::IoError, "cannot decode " + path.string() + ": " + e.what());
  }
  if (m.empty()) throw Error(ErrorCode::IoError, "cannot read image " + path.string());
  Image img(m.cols, m.rows);
  for (int y = 0; y < m.rows; ++y) {
    const auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < m.cols; ++x) {
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<float>(row[x][2 - c]) / 255.0f;
    }
  }
  return img;
}

// Writes an 8-bit image; the format follows the file extension.
inline void save_image(const std::filesystem::path& path, const Image& img) {
  cv::Mat m(img.height, img.width, CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(x, y, c), 0.0f, 1.0f);
        row[x][2 - c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw Error(ErrorCode::IoError, "cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

}  // namespace e3cm
