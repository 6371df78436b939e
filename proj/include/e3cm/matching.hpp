#pragma once

// Exact dense nearest-neighbour matching between two feature maps under the
// cosine distance, with a ratio test and an optional mutual check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/features.hpp"
#include "e3cm/parallel.hpp"

namespace e3cm {

namespace detail {

inline double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

inline double l2_norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

// Zero-norm descriptors have similarity 0 with everything.
inline double cosine_from_parts(double dot_ab, double norm_a, double norm_b, bool* zero_vector) {
  if (norm_a == 0.0 || norm_b == 0.0) {
    if (zero_vector != nullptr) *zero_vector = true;
    return 0.0;
  }
  return std::clamp(dot_ab / (norm_a * norm_b), -1.0, 1.0);
}

}  // namespace detail

// Cosine similarity in [-1, 1]. A zero-norm input yields 0 and sets
// *zero_vector when provided.
inline double cosine_similarity(std::span<const float> a, std::span<const float> b, bool* zero_vector = nullptr) {
  if (a.size() != b.size()) {
    throw Error(ErrorCode::InvalidArgument, "descriptor dimensions differ: " + std::to_string(a.size()) + " vs " +
                                                std::to_string(b.size()));
  }
  return detail::cosine_from_parts(detail::dot(a, b), detail::l2_norm(a), detail::l2_norm(b), zero_vector);
}

// 1 - cosine similarity, in [0, 2].
inline double descriptor_distance(std::span<const float> a, std::span<const float> b, bool* zero_vector = nullptr) {
  return 1.0 - cosine_similarity(a, b, zero_vector);
}

struct Match {
  CellCoord a;
  CellCoord b;
  double distance = 0.0;
  double ratio = 0.0;  // best / second-best distance
  std::optional<double> confidence;
};

struct MatchSet {
  int layer = 0;
  std::vector<Match> matches;  // sorted by a, row-major
  int height_a = 0;
  int width_a = 0;
  int height_b = 0;
  int width_b = 0;

  std::size_t size() const { return matches.size(); }
  bool empty() const { return matches.empty(); }
};

// Per-A-cell list of admissible B cells. A cell with an empty list produces
// no match.
class CandidateMask {
 public:
  CandidateMask(const FeatureMap& a, const FeatureMap& b)
      : height_a_(a.height), width_a_(a.width), height_b_(b.height), width_b_(b.width), lists_(a.cell_count()) {}

  CandidateMask(int height_a, int width_a, int height_b, int width_b)
      : height_a_(height_a),
        width_a_(width_a),
        height_b_(height_b),
        width_b_(width_b),
        lists_(static_cast<std::size_t>(height_a) * width_a) {}

  void allow(CellCoord a, CellCoord b) {
    check(a, b);
    insert(list(a), static_cast<std::uint32_t>(b.h * width_b_ + b.w));
  }

  // Allows the rectangle [h0, h1] x [w0, w1] of B, clipped to the map.
  void allow_window(CellCoord a, int h0, int w0, int h1, int w1) {
    h0 = std::max(h0, 0);
    w0 = std::max(w0, 0);
    h1 = std::min(h1, height_b_ - 1);
    w1 = std::min(w1, width_b_ - 1);
    for (int h = h0; h <= h1; ++h) {
      for (int w = w0; w <= w1; ++w) allow(a, {h, w});
    }
  }

  bool allows(CellCoord a, CellCoord b) const {
    const auto& l = lists_[static_cast<std::size_t>(a.h) * width_a_ + a.w];
    return std::binary_search(l.begin(), l.end(), static_cast<std::uint32_t>(b.h * width_b_ + b.w));
  }

  // Sorted B indices (row-major) admissible for A cell `a_index`.
  std::span<const std::uint32_t> candidates(std::size_t a_index) const { return lists_[a_index]; }

  bool matches_shape(const FeatureMap& a, const FeatureMap& b) const {
    return a.height == height_a_ && a.width == width_a_ && b.height == height_b_ && b.width == width_b_;
  }

 private:
  void check(CellCoord a, CellCoord b) const {
    if (a.h < 0 || a.w < 0 || a.h >= height_a_ || a.w >= width_a_ || b.h < 0 || b.w < 0 || b.h >= height_b_ ||
        b.w >= width_b_) {
      throw Error(ErrorCode::OutOfBounds, "candidate mask cell out of range");
    }
  }
  std::vector<std::uint32_t>& list(CellCoord a) { return lists_[static_cast<std::size_t>(a.h) * width_a_ + a.w]; }
  static void insert(std::vector<std::uint32_t>& l, std::uint32_t v) {
    const auto it = std::lower_bound(l.begin(), l.end(), v);
    if (it == l.end() || *it != v) l.insert(it, v);
  }

  int height_a_, width_a_, height_b_, width_b_;
  std::vector<std::vector<std::uint32_t>> lists_;
};

struct MatchOptions {
  double ratio_threshold = 0.9;
  bool mutual = true;
  unsigned threads = 0;
};

// Ratio of best to second-best distance. A lone candidate has ratio 0; two
// zero distances have ratio 1.
inline double nn_ratio(double best, double second) {
  if (std::isinf(second)) return 0.0;
  if (second == 0.0) return 1.0;
  return best / second;
}

// For every cell of `a`, finds the nearest and second-nearest cells of `b`
// (restricted to the mask when one is given) and keeps the pair when
// best/second < ratio_threshold. With `mutual`, the A cell must also be the
// nearest among all A cells that list that B cell as a candidate. Equal
// distances resolve to the lowest row-major index. Output order and content
// do not depend on the thread count.
inline MatchSet dense_nn_match(const FeatureMap& a, const FeatureMap& b, const MatchOptions& opts = {},
                               const CandidateMask* mask = nullptr) {
  if (a.channels != b.channels) {
    throw Error(ErrorCode::InvalidArgument, "feature maps have different channel counts");
  }
  if (a.layer != b.layer) throw Error(ErrorCode::InvalidArgument, "feature maps come from different layers");
  if (!(opts.ratio_threshold > 0.0) || opts.ratio_threshold > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "ratio threshold must lie in (0, 1]");
  }
  if (mask != nullptr && !mask->matches_shape(a, b)) {
    throw Error(ErrorCode::MaskShapeMismatch, "candidate mask shape does not match the feature maps");
  }

  const std::size_t na = a.cell_count();
  const std::size_t nb = b.cell_count();
  std::vector<double> norm_a(na), norm_b(nb);
  for (std::size_t i = 0; i < na; ++i) norm_a[i] = detail::l2_norm(a.descriptor(i));
  for (std::size_t j = 0; j < nb; ++j) norm_b[j] = detail::l2_norm(b.descriptor(j));

  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();
  struct Best {
    double distance = kInf;
    std::uint32_t index = kNone;
  };

  std::vector<Best> forward(na);
  std::vector<double> second(na, kInf);
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(resolve_threads(opts.threads), std::max<std::size_t>(na, 1)));
  std::vector<std::vector<Best>> reverse(opts.mutual ? workers : 0, std::vector<Best>(opts.mutual ? nb : 0));

  parallel_for(na, workers, [&](std::size_t begin, std::size_t end, unsigned worker) {
    std::vector<Best>* rev = opts.mutual ? &reverse[worker] : nullptr;
    auto visit = [&](std::size_t i, std::uint32_t j, Best& best, double& sec) {
      const double d =
          1.0 - detail::cosine_from_parts(detail::dot(a.descriptor(i), b.descriptor(j)), norm_a[i], norm_b[j], nullptr);
      if (d < best.distance) {
        sec = best.distance;
        best = {d, j};
      } else if (d < sec) {
        sec = d;
      }
      if (rev != nullptr && d < (*rev)[j].distance) (*rev)[j] = {d, static_cast<std::uint32_t>(i)};
    };
    for (std::size_t i = begin; i < end; ++i) {
      Best best;
      double sec = kInf;
      if (mask != nullptr) {
        for (std::uint32_t j : mask->candidates(i)) visit(i, j, best, sec);
      } else {
        for (std::uint32_t j = 0; j < nb; ++j) visit(i, j, best, sec);
      }
      forward[i] = best;
      second[i] = sec;
    }
  });

  // Workers cover increasing A ranges, so on equal distances the earlier
  // worker holds the lower A index.
  std::vector<Best> reverse_best;
  if (opts.mutual) {
    reverse_best = std::move(reverse[0]);
    for (unsigned w = 1; w < workers; ++w) {
      for (std::size_t j = 0; j < nb; ++j) {
        if (reverse[w][j].distance < reverse_best[j].distance) reverse_best[j] = reverse[w][j];
      }
    }
  }

  MatchSet out{a.layer, {}, a.height, a.width, b.height, b.width};
  for (std::size_t i = 0; i < na; ++i) {
    const Best& best = forward[i];
    if (best.index == kNone) continue;
    const double ratio = nn_ratio(best.distance, second[i]);
    if (!(ratio < opts.ratio_threshold)) continue;
    if (opts.mutual && reverse_best[best.index].index != i) continue;
    out.matches.push_back({a.cell(i), b.cell(best.index), best.distance, ratio, std::nullopt});
  }
  return out;
}

}  // namespace e3cm
