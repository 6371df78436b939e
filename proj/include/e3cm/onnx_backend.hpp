#pragma once

// ONNX inference backend on OpenCV's dnn module.

#include <opencv2/core.hpp>
#include <opencv2/dnn.hpp>

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/features.hpp"

namespace e3cm {

class OnnxModel final : public InferenceModel {
 public:
  explicit OnnxModel(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) {
      throw Error(ErrorCode::ModelLoadError, "model file not found: " + path.string());
    }
    try {
      net_ = cv::dnn::readNetFromONNX(path.string());
    } catch (const cv::Exception& e) {
      throw Error(ErrorCode::ModelLoadError, "cannot load " + path.string() + ": " + e.what());
    }
    if (net_.empty()) throw Error(ErrorCode::ModelLoadError, "empty network in " + path.string());
    net_.setPreferableBackend(cv::dnn::DNN_BACKEND_OPENCV);
    net_.setPreferableTarget(cv::dnn::DNN_TARGET_CPU);
  }

  std::vector<Tensor3> run(const Tensor3& input, std::span<const std::string> taps) const override {
    const int shape[] = {1, input.channels, input.height, input.width};
    cv::Mat blob(4, shape, CV_32F);
    std::copy(input.data.begin(), input.data.end(), blob.ptr<float>());
    std::vector<cv::String> names(taps.begin(), taps.end());
    std::vector<cv::Mat> outs;
    {
      // cv::dnn::Net keeps per-call state, so calls are serialized.
      std::lock_guard lock(mutex_);
      try {
        net_.setInput(blob);
        net_.forward(outs, names);
      } catch (const cv::Exception& e) {
        throw Error(ErrorCode::ModelLoadError, std::string("inference failed: ") + e.what());
      }
    }
    std::vector<Tensor3> result;
    result.reserve(outs.size());
    for (std::size_t i = 0; i < outs.size(); ++i) {
      const cv::Mat& o = outs[i];
      if (o.dims != 4 || o.size[0] != 1 || o.type() != CV_32F) {
        throw Error(ErrorCode::ShapeMismatch, "tap '" + std::string(taps[i]) + "' is not a 1xCxHxW float tensor");
      }
      Tensor3 t{o.size[1], o.size[2], o.size[3], {}};
      const cv::Mat c = o.isContinuous() ? o : o.clone();
      const float* p = c.ptr<float>();
      t.data.assign(p, p + static_cast<std::size_t>(t.channels) * t.height * t.width);
      result.push_back(std::move(t));
    }
    return result;
  }

 private:
  mutable cv::dnn::Net net_;
  mutable std::mutex mutex_;
};

inline FeatureExtractor make_extractor(const BackendManifest& manifest) {
  manifest.validate();
  if (manifest.is_builtin()) return {manifest, nullptr};
  if (manifest.model.empty()) {
    throw Error(ErrorCode::ModelLoadError, "manifest for backend '" + manifest.backend + "' names no model file");
  }
  return {manifest, std::make_shared<OnnxModel>(manifest.model)};
}

// "builtin:L" selects the builtin backend with L layers; anything else is a
// manifest path.
inline FeatureExtractor make_extractor(std::string_view backend) {
  constexpr std::string_view prefix = "builtin:";
  if (backend.starts_with(prefix)) {
    const std::string n(backend.substr(prefix.size()));
    int layers = 0;
    try {
      std::size_t used = 0;
      layers = std::stoi(n, &used);
      if (used != n.size()) throw std::invalid_argument(n);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad builtin layer count '" + n + "'");
    }
    if (layers < 2 || layers > 16) throw Error(ErrorCode::InvalidArgument, "builtin layer count must be in [2, 16]");
    return make_extractor(BackendManifest::builtin(layers));
  }
  return make_extractor(BackendManifest::from_file(std::string(backend)));
}

}  // namespace e3cm
