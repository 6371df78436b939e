#pragma once

// Multi-layer dense descriptor pyramids and layer <-> image coordinate
// mapping. Two sources of pyramids exist: a model-free builtin backend used
// for testing, and inference backends described by a JSON manifest (see
// onnx_backend.hpp for the runtime that executes them).

#include <json.hpp>

#include <array>
#include <cmath>
#include <compare>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/geometry.hpp"
#include "e3cm/image.hpp"

namespace e3cm {

struct CellCoord {
  int h = 0;
  int w = 0;

  friend bool operator==(const CellCoord&, const CellCoord&) = default;
  friend auto operator<=>(const CellCoord&, const CellCoord&) = default;  // row-major order
};

// One layer of descriptors: height x width cells, `channels` floats each,
// stored row-major with the channel index fastest.
struct FeatureMap {
  int layer = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
  double scale = 1.0;  // image pixels per cell
  std::vector<float> data;

  std::size_t cell_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(CellCoord c) const { return static_cast<std::size_t>(c.h) * width + c.w; }
  CellCoord cell(std::size_t index) const {
    return {static_cast<int>(index / width), static_cast<int>(index % width)};
  }
  bool contains(CellCoord c) const { return c.h >= 0 && c.w >= 0 && c.h < height && c.w < width; }

  std::span<const float> descriptor(std::size_t index) const {
    return {data.data() + index * channels, static_cast<std::size_t>(channels)};
  }
  std::span<const float> descriptor(CellCoord c) const { return descriptor(index(c)); }
  std::span<float> descriptor(CellCoord c) {
    return {data.data() + index(c) * channels, static_cast<std::size_t>(channels)};
  }
};

struct FeaturePyramid {
  std::vector<FeatureMap> layers;  // 0 = shallowest
  int source_width = 0;
  int source_height = 0;

  std::size_t size() const { return layers.size(); }
  const FeatureMap& operator[](std::size_t l) const { return layers[l]; }

  void validate() const {
    if (layers.size() < 2) throw Error(ErrorCode::InvalidArgument, "a pyramid needs at least two layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const FeatureMap& m = layers[l];
      if (m.channels < 1 || m.height < 1 || m.width < 1 || m.data.size() != m.cell_count() * m.channels) {
        throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " has inconsistent dimensions");
      }
      if (l > 0 && !(m.scale > layers[l - 1].scale)) {
        throw Error(ErrorCode::InvalidArgument, "layer scales must strictly increase with depth");
      }
      for (float v : m.data) {
        if (!std::isfinite(v)) {
          throw Error(ErrorCode::ShapeMismatch, "layer " + std::to_string(l) + " has non-finite descriptors");
        }
      }
    }
  }
};

// Center of the image patch covered by a cell.
inline PixelPoint layer_to_image(CellCoord c, const FeatureMap& map) {
  if (!map.contains(c)) {
    throw Error(ErrorCode::OutOfBounds, "cell (" + std::to_string(c.h) + "," + std::to_string(c.w) +
                                            ") outside " + std::to_string(map.height) + "x" +
                                            std::to_string(map.width) + " map");
  }
  return {(c.w + 0.5) * map.scale, (c.h + 0.5) * map.scale};
}

inline CellCoord image_to_layer(const PixelPoint& p, const FeatureMap& map) {
  const CellCoord c{static_cast<int>(std::floor(p.y / map.scale)), static_cast<int>(std::floor(p.x / map.scale))};
  if (!map.contains(c)) throw Error(ErrorCode::OutOfBounds, "pixel maps outside the feature map");
  return c;
}

// --- builtin backend --------------------------------------------------------

// Builtin descriptor recipe, per cell of a box-downsampled image (gray = mean
// of RGB, mu = mean gray over the clamped 5x5 neighborhood):
//   [0..2]   RGB - mu
//   [3..4]   central-difference gray gradient (x, y)
//   [5..13]  3x3 gray neighborhood at stride 1, minus mu
//   [14..21] the 8 stride-2 neighbors, minus mu
inline constexpr int kBuiltinChannels = 22;

namespace detail {

struct Plane {
  int width = 0;
  int height = 0;
  std::vector<double> v;

  double at(int x, int y) const {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return v[static_cast<std::size_t>(y) * width + x];
  }
};

inline FeatureMap builtin_layer(const Image& img, int crop_w, int crop_h, int level) {
  const int factor = 1 << level;
  const int w = crop_w / factor;
  const int h = crop_h / factor;
  std::array<Plane, 3> color;
  for (auto& p : color) p = Plane{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
  Plane gray{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, 0.0)};
  const double inv_area = 1.0 / (static_cast<double>(factor) * factor);
  for (int cy = 0; cy < h; ++cy) {
    for (int cx = 0; cx < w; ++cx) {
      std::array<double, 3> sum{0.0, 0.0, 0.0};
      for (int y = cy * factor; y < (cy + 1) * factor; ++y) {
        for (int x = cx * factor; x < (cx + 1) * factor; ++x) {
          for (int c = 0; c < 3; ++c) sum[c] += img.at(x, y, c);
        }
      }
      const std::size_t i = static_cast<std::size_t>(cy) * w + cx;
      for (int c = 0; c < 3; ++c) color[c].v[i] = sum[c] * inv_area;
      gray.v[i] = (color[0].v[i] + color[1].v[i] + color[2].v[i]) / 3.0;
    }
  }

  FeatureMap map;
  map.layer = level;
  map.height = h;
  map.width = w;
  map.channels = kBuiltinChannels;
  map.scale = factor;
  map.data.resize(map.cell_count() * kBuiltinChannels);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double mu = 0.0;
      for (int dy = -2; dy <= 2; ++dy) {
        for (int dx = -2; dx <= 2; ++dx) mu += gray.at(x + dx, y + dy);
      }
      mu /= 25.0;
      float* d = map.data.data() + map.index({y, x}) * kBuiltinChannels;
      int k = 0;
      for (int c = 0; c < 3; ++c) d[k++] = static_cast<float>(color[c].at(x, y) - mu);
      d[k++] = static_cast<float>(0.5 * (gray.at(x + 1, y) - gray.at(x - 1, y)));
      d[k++] = static_cast<float>(0.5 * (gray.at(x, y + 1) - gray.at(x, y - 1)));
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) d[k++] = static_cast<float>(gray.at(x + dx, y + dy) - mu);
      }
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          d[k++] = static_cast<float>(gray.at(x + 2 * dx, y + 2 * dy) - mu);
        }
      }
    }
  }
  return map;
}

}  // namespace detail

// Model-free pyramid: layer l is the image box-downsampled by 2^l. The image
// is cropped (top-left anchored) to a multiple of 2^(L-1) in each dimension.
inline FeaturePyramid builtin_pyramid(const Image& image, int layer_count) {
  image.validate();
  if (layer_count < 2 || layer_count > 16) {
    throw Error(ErrorCode::InvalidArgument, "builtin backend needs 2..16 layers");
  }
  const int block = 1 << (layer_count - 1);
  const int crop_w = image.width - image.width % block;
  const int crop_h = image.height - image.height % block;
  if (crop_w / block < 8 || crop_h / block < 8) {
    throw Error(ErrorCode::ImageTooSmall, "deepest builtin layer would be smaller than 8x8 cells");
  }
  FeaturePyramid pyr;
  pyr.source_width = image.width;
  pyr.source_height = image.height;
  for (int l = 0; l < layer_count; ++l) pyr.layers.push_back(detail::builtin_layer(image, crop_w, crop_h, l));
  return pyr;
}

// --- manifests and inference backends ---------------------------------------

struct LayerSpec {
  std::string tap;
  double scale = 1.0;
  int channels = 0;
  bool round_up = false;  // expected map size ceil(size / scale) instead of floor
};

struct PreprocessSpec {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
  int multiple_of = 1;  // "none" -> 1; the input is cropped to a multiple of this
  std::string channel_order = "RGB";
};

struct BackendManifest {
  std::string backend = "builtin";
  std::filesystem::path model;
  PreprocessSpec preprocess;
  std::vector<LayerSpec> layers;

  bool is_builtin() const { return backend == "builtin"; }

  static BackendManifest builtin(int layer_count) {
    BackendManifest m;
    for (int l = 0; l < layer_count; ++l) {
      m.layers.push_back({"builtin" + std::to_string(l), static_cast<double>(1 << l), kBuiltinChannels, false});
    }
    return m;
  }

  void validate() const {
    if (backend.empty()) throw Error(ErrorCode::InvalidArgument, "manifest backend id is empty");
    if (layers.size() < 2) throw Error(ErrorCode::InvalidArgument, "manifest needs at least two layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (!(layers[l].scale > 0.0) || layers[l].channels < 1) {
        throw Error(ErrorCode::InvalidArgument, "manifest layer " + std::to_string(l) + " has invalid scale/channels");
      }
      if (l > 0 && !(layers[l].scale > layers[l - 1].scale)) {
        throw Error(ErrorCode::InvalidArgument, "manifest layers must be sorted shallowest to deepest");
      }
    }
    for (double s : preprocess.std) {
      if (!(s > 0.0)) throw Error(ErrorCode::InvalidArgument, "preprocess std entries must be positive");
    }
    if (preprocess.multiple_of < 1) throw Error(ErrorCode::InvalidArgument, "resize multiple must be >= 1");
    if (preprocess.channel_order != "RGB" && preprocess.channel_order != "BGR") {
      throw Error(ErrorCode::InvalidArgument, "channel_order must be RGB or BGR");
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["backend"] = backend;
    j["model"] = model.generic_string();
    j["preprocess"] = {{"mean", preprocess.mean},
                       {"std", preprocess.std},
                       {"resize", preprocess.multiple_of == 1 ? std::string("none")
                                                              : "multiple-of-" + std::to_string(preprocess.multiple_of)},
                       {"channel_order", preprocess.channel_order}};
    j["layers"] = nlohmann::json::array();
    for (const auto& l : layers) {
      nlohmann::json lj{{"tap", l.tap}, {"scale", l.scale}, {"channels", l.channels}};
      if (l.round_up) lj["rounding"] = "ceil";
      j["layers"].push_back(lj);
    }
    return j;
  }

  // Relative model paths are resolved against base_dir.
  static BackendManifest from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
    BackendManifest m;
    try {
      m.backend = j.at("backend").get<std::string>();
      if (j.contains("model") && !j.at("model").get<std::string>().empty()) {
        std::filesystem::path p = j.at("model").get<std::string>();
        m.model = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
      }
      if (j.contains("preprocess")) {
        const auto& pj = j.at("preprocess");
        if (pj.contains("mean")) m.preprocess.mean = pj.at("mean").get<std::array<double, 3>>();
        if (pj.contains("std")) m.preprocess.std = pj.at("std").get<std::array<double, 3>>();
        if (pj.contains("channel_order")) m.preprocess.channel_order = pj.at("channel_order").get<std::string>();
        if (pj.contains("resize")) {
          const auto r = pj.at("resize").get<std::string>();
          const std::string prefix = "multiple-of-";
          if (r == "none") {
            m.preprocess.multiple_of = 1;
          } else if (r.rfind(prefix, 0) == 0) {
            m.preprocess.multiple_of = std::stoi(r.substr(prefix.size()));
          } else {
            throw Error(ErrorCode::InvalidArgument, "unknown resize policy '" + r + "'");
          }
        }
      }
      for (const auto& lj : j.at("layers")) {
        LayerSpec l;
        l.tap = lj.at("tap").get<std::string>();
        l.scale = lj.at("scale").get<double>();
        l.channels = lj.at("channels").get<int>();
        l.round_up = lj.value("rounding", std::string("floor")) == "ceil";
        m.layers.push_back(l);
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("malformed manifest: ") + e.what());
    } catch (const std::logic_error& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("malformed manifest: ") + e.what());
    }
    m.validate();
    return m;
  }

  static BackendManifest from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MissingFile, "cannot open manifest " + path.string());
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::InvalidArgument, "manifest " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j, path.parent_path());
  }
};

// Channel-major activation tensor for a single image.
struct Tensor3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;
};

// A loaded network that maps a preprocessed image tensor to one activation
// tensor per requested tap. Implementations must be safe to call from
// several threads at once.
class InferenceModel {
 public:
  virtual ~InferenceModel() = default;
  virtual std::vector<Tensor3> run(const Tensor3& input, std::span<const std::string> taps) const = 0;
};

namespace detail {

inline Tensor3 preprocess(const Image& image, const PreprocessSpec& spec) {
  const int m = spec.multiple_of;
  const int w = image.width - image.width % m;
  const int h = image.height - image.height % m;
  if (w < 1 || h < 1) throw Error(ErrorCode::PreprocessError, "image smaller than the resize multiple");
  Tensor3 t{3, h, w, std::vector<float>(static_cast<std::size_t>(3) * w * h)};
  const bool bgr = spec.channel_order == "BGR";
  for (int c = 0; c < 3; ++c) {
    const int src = bgr ? 2 - c : c;
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = (image.at(x, y, src) - spec.mean[c]) / spec.std[c];
        if (!std::isfinite(v)) throw Error(ErrorCode::PreprocessError, "non-finite sample after normalization");
        t.data[(static_cast<std::size_t>(c) * h + y) * w + x] = static_cast<float>(v);
      }
    }
  }
  return t;
}

inline int expected_extent(int size, const LayerSpec& l) {
  const double cells = size / l.scale;
  return static_cast<int>(l.round_up ? std::ceil(cells - 1e-9) : std::floor(cells + 1e-9));
}

}  // namespace detail

// Runs the manifest's backend on one image. Descriptors are the raw
// activations; nothing is normalized here.
inline FeaturePyramid extract_pyramid(const Image& image, const BackendManifest& manifest,
                                      const InferenceModel* model = nullptr) {
  manifest.validate();
  image.validate();
  if (manifest.is_builtin()) {
    for (std::size_t l = 0; l < manifest.layers.size(); ++l) {
      if (manifest.layers[l].scale != static_cast<double>(1 << l) ||
          manifest.layers[l].channels != kBuiltinChannels) {
        throw Error(ErrorCode::ShapeMismatch, "builtin manifest layer " + std::to_string(l) +
                                                  " must have scale 2^l and " + std::to_string(kBuiltinChannels) +
                                                  " channels");
      }
    }
    return builtin_pyramid(image, static_cast<int>(manifest.layers.size()));
  }
  if (model == nullptr) {
    throw Error(ErrorCode::ModelLoadError, "backend '" + manifest.backend + "' needs a loaded model");
  }
  const Tensor3 input = detail::preprocess(image, manifest.preprocess);
  std::vector<std::string> taps;
  for (const auto& l : manifest.layers) taps.push_back(l.tap);
  const std::vector<Tensor3> outputs = model->run(input, taps);
  if (outputs.size() != manifest.layers.size()) {
    throw Error(ErrorCode::ShapeMismatch, "model returned " + std::to_string(outputs.size()) + " taps, manifest lists " +
                                              std::to_string(manifest.layers.size()));
  }

  FeaturePyramid pyr;
  pyr.source_width = image.width;
  pyr.source_height = image.height;
  for (std::size_t l = 0; l < outputs.size(); ++l) {
    const Tensor3& t = outputs[l];
    const LayerSpec& spec = manifest.layers[l];
    const int eh = detail::expected_extent(input.height, spec);
    const int ew = detail::expected_extent(input.width, spec);
    if (t.channels != spec.channels || t.height != eh || t.width != ew) {
      throw Error(ErrorCode::ShapeMismatch, "tap '" + spec.tap + "' is " + std::to_string(t.channels) + "x" +
                                                std::to_string(t.height) + "x" + std::to_string(t.width) +
                                                ", manifest expects " + std::to_string(spec.channels) + "x" +
                                                std::to_string(eh) + "x" + std::to_string(ew));
    }
    FeatureMap map;
    map.layer = static_cast<int>(l);
    map.height = t.height;
    map.width = t.width;
    map.channels = t.channels;
    map.scale = spec.scale;
    map.data.resize(map.cell_count() * map.channels);
    const std::size_t plane = static_cast<std::size_t>(t.height) * t.width;
    for (std::size_t i = 0; i < plane; ++i) {
      for (int c = 0; c < t.channels; ++c) map.data[i * t.channels + c] = t.data[c * plane + i];
    }
    pyr.layers.push_back(std::move(map));
  }
  pyr.validate();
  return pyr;
}

// A manifest bound to its loaded model (null for the builtin backend).
struct FeatureExtractor {
  BackendManifest manifest;
  std::shared_ptr<const InferenceModel> model;

  FeaturePyramid operator()(const Image& image) const { return extract_pyramid(image, manifest, model.get()); }
};

}  // namespace e3cm
