#pragma once

// Deterministic synthetic two-view scenes with exact ground truth, plus
// procedural renderers producing image pairs for end-to-end runs.
//
// Pixel convention everywhere: pixel (u, v) covers [u, u+1) x [v, v+1), so
// its center is (u + 0.5, v + 0.5), the same convention layer_to_image uses.

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <random>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/geometry.hpp"
#include "e3cm/image.hpp"

namespace e3cm {

struct CameraSpec {
  int width = 256;
  int height = 256;
  CameraIntrinsics ka{220.0, 220.0, 128.0, 128.0, 0.0};
  CameraIntrinsics kb{220.0, 220.0, 128.0, 128.0, 0.0};
  double baseline = 0.6;           // world units, before t is normalized
  double min_rotation_deg = 0.0;   // rotation angle drawn uniformly in [min, max]
  double max_rotation_deg = 6.0;
  double lateral_jitter = 0.25;    // y/z components of the direction before normalization
  double min_depth = 3.0;
  double max_depth = 8.0;
  int border = 8;                  // keep projections this many px inside both images
};

struct SyntheticScene {
  CameraSpec camera;
  RelativePose pose;       // X_B = R X_A + baseline * t
  Vec3 translation;        // metric translation, baseline * pose.translation
  std::vector<Vec3> points;  // in camera A coordinates
  std::vector<Correspondence> correspondences;
  FundamentalMatrix fundamental;
  EssentialMatrix essential;
};

namespace detail {

inline Vec3 unproject(const CameraIntrinsics& k, const PixelPoint& p, double depth) {
  const PixelPoint c = k.to_calibrated(p);
  return {c.x * depth, c.y * depth, depth};
}

inline PixelPoint project(const CameraIntrinsics& k, const Vec3& x) {
  const Vec3 v = k.matrix() * x;
  return {v.x() / v.z(), v.y() / v.z()};
}

}  // namespace detail

// Analytic F = K_B^{-T} [t]x R K_A^{-1}.
inline Mat3 analytic_fundamental(const CameraIntrinsics& ka, const CameraIntrinsics& kb, const RelativePose& pose) {
  return kb.matrix().inverse().transpose() * skew(pose.translation) * pose.rotation * ka.matrix().inverse();
}

inline SyntheticScene synth_scene(std::uint64_t seed, int n_points, const CameraSpec& spec = {}) {
  if (n_points < 8) throw Error(ErrorCode::DegenerateCameraSpec, "need at least 8 points");
  if (spec.width < 16 || spec.height < 16 || !(spec.min_depth > 0.0) || !(spec.max_depth > spec.min_depth) ||
      !(spec.baseline > 0.0) || spec.min_rotation_deg < 0.0 || spec.max_rotation_deg < spec.min_rotation_deg || 2 * spec.border >= std::min(spec.width, spec.height)) {
    throw Error(ErrorCode::DegenerateCameraSpec, "invalid camera spec");
  }
  try {
    spec.ka.validate();
    spec.kb.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::DegenerateCameraSpec, e.what());
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const Vec3 axis = Vec3(gauss(rng), gauss(rng), gauss(rng)).normalized();
  const double angle =
      (spec.min_rotation_deg + unit(rng) * (spec.max_rotation_deg - spec.min_rotation_deg)) * std::numbers::pi / 180.0;
  const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  const Vec3 dir = Vec3(sign, spec.lateral_jitter * (2.0 * unit(rng) - 1.0), spec.lateral_jitter * (2.0 * unit(rng) - 1.0))
                       .normalized();

  RelativePose pose{Eigen::AngleAxisd(angle, axis).toRotationMatrix(), dir};
  const Vec3 t = spec.baseline * dir;

  SyntheticScene scene{spec,
                       pose,
                       t,
                       {},
                       {},
                       enforce_rank2(analytic_fundamental(spec.ka, spec.kb, pose)),
                       project_to_essential(skew(pose.translation) * pose.rotation)};

  const double b = spec.border;
  const long long max_attempts = 2000LL * n_points;
  for (long long attempt = 0; attempt < max_attempts && static_cast<int>(scene.points.size()) < n_points; ++attempt) {
    const PixelPoint pa{b + unit(rng) * (spec.width - 2 * b), b + unit(rng) * (spec.height - 2 * b)};
    const double depth = spec.min_depth + unit(rng) * (spec.max_depth - spec.min_depth);
    const Vec3 xa = detail::unproject(spec.ka, pa, depth);
    const Vec3 xb = pose.rotation * xa + t;
    if (xb.z() < 0.1) continue;
    const PixelPoint pb = detail::project(spec.kb, xb);
    if (pb.x < b || pb.y < b || pb.x > spec.width - b || pb.y > spec.height - b) continue;
    scene.points.push_back(xa);
    scene.correspondences.push_back({detail::project(spec.ka, xa), pb});
  }
  if (static_cast<int>(scene.points.size()) < n_points) {
    throw Error(ErrorCode::DegenerateCameraSpec, "too few points visible in both cameras");
  }
  return scene;
}

// --- procedural texture -----------------------------------------------------

// Multi-octave value noise over R^3, three independent color channels.
class ProceduralTexture {
 public:
  explicit ProceduralTexture(std::uint64_t seed, std::array<double, 5> wavelengths = {0.075, 0.15, 0.3, 0.6, 1.2})
      : seed_(seed), wavelengths_(wavelengths) {}

  std::array<double, 3> operator()(double x, double y, double z) const {
    std::array<double, 3> rgb{};
    for (int c = 0; c < 3; ++c) {
      double v = 0.0;
      for (std::size_t o = 0; o < wavelengths_.size(); ++o) {
        const double f = 1.0 / wavelengths_[o];
        v += value_noise(x * f, y * f, z * f, static_cast<std::uint64_t>(c * 16 + o));
      }
      v /= static_cast<double>(wavelengths_.size());
      rgb[c] = std::clamp(0.5 + 2.2 * (v - 0.5), 0.0, 1.0);
    }
    return rgb;
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  double lattice(long long i, long long j, long long k, std::uint64_t stream) const {
    std::uint64_t h = mix(seed_ ^ mix(stream));
    h = mix(h ^ static_cast<std::uint64_t>(i));
    h = mix(h ^ static_cast<std::uint64_t>(j));
    h = mix(h ^ static_cast<std::uint64_t>(k));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
  }

  double value_noise(double x, double y, double z, std::uint64_t stream) const {
    const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
    const auto ix = static_cast<long long>(fx), iy = static_cast<long long>(fy), iz = static_cast<long long>(fz);
    auto fade = [](double t) { return t * t * (3.0 - 2.0 * t); };
    const double u = fade(x - fx), v = fade(y - fy), w = fade(z - fz);
    auto lerp = [](double a, double b, double t) { return a + (b - a) * t; };
    const double c00 = lerp(lattice(ix, iy, iz, stream), lattice(ix + 1, iy, iz, stream), u);
    const double c10 = lerp(lattice(ix, iy + 1, iz, stream), lattice(ix + 1, iy + 1, iz, stream), u);
    const double c01 = lerp(lattice(ix, iy, iz + 1, stream), lattice(ix + 1, iy, iz + 1, stream), u);
    const double c11 = lerp(lattice(ix, iy + 1, iz + 1, stream), lattice(ix + 1, iy + 1, iz + 1, stream), u);
    return lerp(lerp(c00, c10, v), lerp(c01, c11, v), w);
  }

  std::uint64_t seed_;
  std::array<double, 5> wavelengths_;
};

// Flat textured image; each pixel averages the texture over its area, after
// mapping sample points through `to_texture`.
template <typename Warp>
Image render_plane(const ProceduralTexture& tex, int width, int height, int supersample, Warp&& to_texture) {
  Image img(width, height);
  const double inv = 1.0 / supersample;
  for (int v = 0; v < height; ++v) {
    for (int u = 0; u < width; ++u) {
      std::array<double, 3> acc{};
      for (int i = 0; i < supersample; ++i) {
        for (int j = 0; j < supersample; ++j) {
          const PixelPoint p = to_texture(PixelPoint{u + (j + 0.5) * inv, v + (i + 0.5) * inv});
          const auto rgb = tex(p.x, p.y, 0.0);
          for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
        }
      }
      for (int c = 0; c < 3; ++c) img.at(u, v, c) = static_cast<float>(acc[c] / (supersample * supersample));
    }
  }
  return img;
}

struct WarpedPair {
  Image a;
  Image b;
  Homography h;  // maps A pixels to B pixels
};

// Texture image A and its exact warp B(p) = A(H^{-1} p).
inline WarpedPair textured_warp_pair(std::uint64_t seed, int width, int height, const Mat3& h_ab,
                                     int supersample = 4) {
  const Homography h = make_homography(h_ab);
  const Homography h_inv = h.inverse();
  // Texture features from 3 to 48 pixels.
  const ProceduralTexture tex(seed, {3.0, 6.0, 12.0, 24.0, 48.0});
  Image a = render_plane(tex, width, height, supersample, [](const PixelPoint& p) { return p; });
  Image b = render_plane(tex, width, height, supersample, [&](const PixelPoint& p) { return h_inv.project(p); });
  return {std::move(a), std::move(b), h};
}

struct RenderOptions {
  double splat_radius = 0.6;            // world units
  double background_depth_factor = 1.5;  // background plane at this multiple of max_depth
  int supersample = 2;
  std::uint64_t texture_seed = 7;
};

struct RenderedPair {
  Image a;
  Image b;
  std::vector<double> depth_a;  // z-depth of the surface seen through each A pixel center, row-major
};

// Ray-casts both views of the scene: each 3D point carries a textured disk
// facing camera A, in front of a textured background plane. The texture is a
// function of the 3D surface point, so both renders are geometrically exact.
inline RenderedPair render_scene(const SyntheticScene& scene, const RenderOptions& opts = {}) {
  const CameraSpec& cam = scene.camera;
  const ProceduralTexture tex(opts.texture_seed);
  const double bg_depth = cam.max_depth * opts.background_depth_factor;
  const double r2 = opts.splat_radius * opts.splat_radius;

  struct Disk {
    Vec3 center;
    Vec3 normal;
    double tint;
  };
  std::vector<Disk> disks;
  disks.reserve(scene.points.size());
  for (std::size_t i = 0; i < scene.points.size(); ++i) {
    const Vec3& x = scene.points[i];
    disks.push_back({x, -x.normalized(), 0.2 * (std::fmod(i * 0.618033988749895, 1.0) - 0.5)});
  }

  // Ray parameter of the nearest hit and the tint of the surface hit.
  auto intersect = [&](const Vec3& origin, const Vec3& dir) {
    double best_t = std::numeric_limits<double>::infinity();
    double tint = 0.0;
    for (const Disk& d : disks) {
      const double denom = d.normal.dot(dir);
      if (std::abs(denom) < 1e-12) continue;
      const double t = d.normal.dot(d.center - origin) / denom;
      if (t <= 0.0 || t >= best_t) continue;
      if ((origin + t * dir - d.center).squaredNorm() <= r2) {
        best_t = t;
        tint = d.tint;
      }
    }
    if (std::isinf(best_t)) {
      const double t = (bg_depth - origin.z()) / dir.z();
      best_t = t > 0.0 ? t : 0.0;
      tint = 0.0;
    }
    return std::pair{best_t, tint};
  };

  auto shade = [&](const Vec3& origin, const Vec3& dir) {
    const auto [best_t, tint] = intersect(origin, dir);
    const Vec3 p = origin + best_t * dir;
    auto rgb = tex(p.x(), p.y(), p.z());
    for (double& c : rgb) c = std::clamp(c + tint, 0.0, 1.0);
    return rgb;
  };

  auto render = [&](const CameraIntrinsics& k, const Mat3& cam_to_a, const Vec3& center) {
    Image img(cam.width, cam.height);
    const Mat3 k_inv = k.matrix().inverse();
    const int ss = opts.supersample;
    for (int v = 0; v < cam.height; ++v) {
      for (int u = 0; u < cam.width; ++u) {
        std::array<double, 3> acc{};
        for (int i = 0; i < ss; ++i) {
          for (int j = 0; j < ss; ++j) {
            const Vec3 ray = cam_to_a * (k_inv * Vec3(u + (j + 0.5) / ss, v + (i + 0.5) / ss, 1.0));
            const auto rgb = shade(center, ray);
            for (int c = 0; c < 3; ++c) acc[c] += rgb[c];
          }
        }
        for (int c = 0; c < 3; ++c) img.at(u, v, c) = static_cast<float>(acc[c] / (ss * ss));
      }
    }
    return img;
  };

  const Mat3 rt = scene.pose.rotation.transpose();
  RenderedPair out{render(cam.ka, Mat3::Identity(), Vec3::Zero()), render(cam.kb, rt, -rt * scene.translation), {}};
  const Mat3 ka_inv = cam.ka.matrix().inverse();
  out.depth_a.resize(static_cast<std::size_t>(cam.width) * cam.height);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      // Rays through K_A^{-1} (u, v, 1) have unit z, so the hit parameter is the depth.
      out.depth_a[static_cast<std::size_t>(v) * cam.width + u] =
          intersect(Vec3::Zero(), ka_inv * Vec3(u + 0.5, v + 0.5, 1.0)).first;
    }
  }
  return out;
}

}  // namespace e3cm
