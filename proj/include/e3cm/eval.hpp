#pragma once

// Benchmark metrics: mean matching accuracy, homography accuracy, relative
// pose AUC and matching precision, plus optional robust post-processing.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/geometry.hpp"

namespace e3cm {

struct HomographyGT {
  Homography h;
};

struct PoseGT {
  CameraIntrinsics ka;
  CameraIntrinsics kb;
  RelativePose pose;
};

using PairGroundTruth = std::variant<HomographyGT, PoseGT>;

inline std::vector<double> mma_thresholds() { return {1, 2, 3, 4, 5, 6, 7, 8, 9, 10}; }
inline std::vector<double> homography_thresholds() { return {1, 3, 5}; }
inline std::vector<double> pose_auc_thresholds() { return {5, 10, 20}; }
inline constexpr double kEpipolarPrecisionThreshold = 5e-4;

// Fractions in [0, 1]; `empty` marks an input with no matches, for which all
// fractions are 0.
struct FractionResult {
  std::vector<double> values;
  bool empty = false;
};

// Reprojection error ||H a - b||; +inf when H a lies at infinity.
inline double reprojection_error(const Homography& h, const Correspondence& c) {
  try {
    const PixelPoint p = h.project(c.a);
    return std::hypot(p.x - c.b.x, p.y - c.b.y);
  } catch (const Error&) {
    return std::numeric_limits<double>::infinity();
  }
}

// Fraction of matches with reprojection error <= each threshold.
inline FractionResult mma(std::span<const Correspondence> matches, const Homography& h,
                          std::span<const double> thresholds) {
  FractionResult r{std::vector<double>(thresholds.size(), 0.0), matches.empty()};
  if (matches.empty()) return r;
  std::vector<double> errors;
  errors.reserve(matches.size());
  for (const auto& c : matches) errors.push_back(reprojection_error(h, c));
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const auto n = std::count_if(errors.begin(), errors.end(), [&](double e) { return e <= thresholds[t]; });
    r.values[t] = static_cast<double>(n) / static_cast<double>(matches.size());
  }
  return r;
}

struct HomographyAccuracy {
  bool estimated = false;
  double corner_error = std::numeric_limits<double>::infinity();
  std::vector<bool> within;  // per threshold
};

// Fits a homography to the matches and compares the four image corners under
// the fit and the ground truth. Fewer than 4 matches, or any degenerate fit,
// is a failure at every threshold.
inline HomographyAccuracy homography_accuracy(std::span<const Correspondence> matches, const Homography& gt,
                                              double width, double height, std::span<const double> thresholds) {
  HomographyAccuracy r{false, std::numeric_limits<double>::infinity(), std::vector<bool>(thresholds.size(), false)};
  if (matches.size() < 4) return r;
  try {
    const Homography est = homography_dlt(matches);
    r.corner_error = corner_error(est, gt, width, height);
    r.estimated = true;
  } catch (const Error&) {
    return r;
  }
  for (std::size_t t = 0; t < thresholds.size(); ++t) r.within[t] = r.corner_error <= thresholds[t];
  return r;
}

// Exact area under the cumulative error curve up to each threshold T,
// normalized by T: (1/(N T)) * sum_i max(0, T - e_i). Non-finite errors
// (failed pairs) contribute 0.
inline std::vector<double> pose_auc(std::span<const double> errors, std::span<const double> thresholds) {
  std::vector<double> out(thresholds.size(), 0.0);
  if (errors.empty()) return out;
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    const double tt = thresholds[t];
    if (!(tt > 0.0)) throw Error(ErrorCode::InvalidArgument, "AUC thresholds must be positive");
    double acc = 0.0;
    for (double e : errors) {
      if (std::isfinite(e)) acc += std::max(0.0, tt - std::max(e, 0.0));
    }
    out[t] = acc / (tt * static_cast<double>(errors.size()));
  }
  return out;
}

// Symmetric epipolar distance of a calibrated correspondence under E.
inline double symmetric_epipolar_distance(const Mat3& e, const PixelPoint& xa, const PixelPoint& xb) {
  const Vec3 a = xa.homogeneous();
  const Vec3 b = xb.homogeneous();
  const Vec3 ea = e * a;
  const Vec3 etb = e.transpose() * b;
  const double r = b.dot(ea);
  const double da = ea.x() * ea.x() + ea.y() * ea.y();
  const double db = etb.x() * etb.x() + etb.y() * etb.y();
  if (da == 0.0 || db == 0.0) return std::numeric_limits<double>::infinity();
  return r * r * (1.0 / da + 1.0 / db);
}

// Fraction of matches that are correct under the ground truth: symmetric
// epipolar distance in normalized coordinates for pose pairs (default
// threshold 5e-4), reprojection error in pixels for homography pairs.
inline FractionResult matching_precision(std::span<const Correspondence> matches, const PairGroundTruth& gt,
                                         std::optional<double> threshold = std::nullopt) {
  FractionResult r{{0.0}, matches.empty()};
  if (matches.empty()) return r;
  std::size_t correct = 0;
  if (const auto* pg = std::get_if<PoseGT>(&gt)) {
    const double thr = threshold.value_or(kEpipolarPrecisionThreshold);
    const Mat3 e = skew(pg->pose.translation) * pg->pose.rotation;
    for (const auto& c : matches) {
      if (symmetric_epipolar_distance(e, pg->ka.to_calibrated(c.a), pg->kb.to_calibrated(c.b)) < thr) ++correct;
    }
  } else {
    const auto& hg = std::get<HomographyGT>(gt);
    const double thr = threshold.value_or(3.0);
    for (const auto& c : matches) {
      if (reprojection_error(hg.h, c) <= thr) ++correct;
    }
  }
  r.values[0] = static_cast<double>(correct) / static_cast<double>(matches.size());
  return r;
}

// Relative pose from pixel matches and a fundamental matrix. Returns nullopt
// when the decomposition is ambiguous or impossible.
inline std::optional<RelativePose> relative_pose_from_fundamental(const FundamentalMatrix& f,
                                                                  std::span<const Correspondence> pixel_matches,
                                                                  const CameraIntrinsics& ka,
                                                                  const CameraIntrinsics& kb) {
  if (pixel_matches.empty()) return std::nullopt;
  try {
    const EssentialMatrix e = essential_from_fundamental(f, ka, kb);
    std::vector<Correspondence> calibrated;
    calibrated.reserve(pixel_matches.size());
    for (const auto& c : pixel_matches) calibrated.push_back({ka.to_calibrated(c.a), kb.to_calibrated(c.b)});
    return decompose_essential(e, calibrated);
  } catch (const Error&) {
    return std::nullopt;
  }
}

// --- robust post-processing -------------------------------------------------

struct RansacOptions {
  int iterations = 2000;
  std::uint64_t seed = 0;
  double threshold = 1.0;  // Sampson px^2 for F, reprojection px for H
};

struct RansacResult {
  std::vector<Correspondence> inliers;
  std::vector<bool> mask;
};

namespace detail {

template <typename Fit, typename Residual>
RansacResult ransac(std::span<const Correspondence> corrs, std::size_t sample_size, const RansacOptions& opts,
                    Fit&& fit, Residual&& residual) {
  RansacResult best{{}, std::vector<bool>(corrs.size(), false)};
  if (corrs.size() < sample_size) return best;
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> idx(corrs.size());
  std::size_t best_count = 0;
  std::vector<Correspondence> sample(sample_size);
  for (int it = 0; it < opts.iterations; ++it) {
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    for (std::size_t k = 0; k < sample_size; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, idx.size() - 1);
      std::swap(idx[k], idx[pick(rng)]);
      sample[k] = corrs[idx[k]];
    }
    std::optional<decltype(fit(std::span<const Correspondence>(sample)))> model;
    try {
      model = fit(std::span<const Correspondence>(sample));
    } catch (const Error&) {
      continue;
    }
    std::vector<bool> mask(corrs.size());
    std::size_t count = 0;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      mask[i] = residual(*model, corrs[i]) <= opts.threshold;
      count += mask[i] ? 1 : 0;
    }
    if (count > best_count) {
      best_count = count;
      best.mask = std::move(mask);
    }
  }
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (best.mask[i]) best.inliers.push_back(corrs[i]);
  }
  return best;
}

}  // namespace detail

// Seeded RANSAC over eight-point fits; returns the largest consensus set.
inline RansacResult ransac_fundamental(std::span<const Correspondence> corrs, const RansacOptions& opts = {}) {
  return detail::ransac(
      corrs, 8, opts, [](std::span<const Correspondence> s) { return estimate_fundamental(s).fundamental; },
      [](const FundamentalMatrix& f, const Correspondence& c) { return sampson_distance(f, c.a, c.b); });
}

// Seeded RANSAC over four-point homography fits.
inline RansacResult ransac_homography(std::span<const Correspondence> corrs, const RansacOptions& opts = {}) {
  return detail::ransac(
      corrs, 4, opts, [](std::span<const Correspondence> s) { return homography_dlt(s); },
      [](const Homography& h, const Correspondence& c) { return reprojection_error(h, c); });
}

}  // namespace e3cm
