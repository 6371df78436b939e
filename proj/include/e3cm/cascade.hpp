#pragma once

// Epipolar-constrained cascade refinement. Matching starts at the deepest
// selected layer; the most confident deep matches seed a fundamental matrix,
// which rejects outliers among the next shallower layer's candidates; the
// survivors re-estimate the matrix, and so on down to the shallowest layer.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/features.hpp"
#include "e3cm/geometry.hpp"
#include "e3cm/matching.hpp"

namespace e3cm {

// Where the shallow-layer matches that feed the confidence score come from.
enum class ConfidenceSupport {
  patch,   // NN search of each shallow cell restricted to its deep match's partner patch
  global,  // unrestricted NN search over the whole shallowest map (quadratic in its size)
};

struct StereoIntrinsics {
  CameraIntrinsics a;
  CameraIntrinsics b;
};

struct CascadeConfig {
  std::vector<int> layers;               // pyramid indices, deepest first; empty selects all
  double ratio_threshold = 0.9;
  std::vector<double> ratio_thresholds;  // optional, one per selected layer
  double sampson_threshold = 1.0;        // px^2 at the shallowest selected layer
  std::vector<double> sampson_thresholds;  // optional, one per selected layer (px^2)
  int top_k = 8;
  int min_matches = 8;
  double epsilon = 1e-6;
  bool mutual = true;
  int margin = 1;  // ring of extra candidate cells around each refined block
  ConfidenceSupport confidence_support = ConfidenceSupport::patch;
  std::optional<StereoIntrinsics> intrinsics;  // estimate E on calibrated points when set
  EightPointOptions eight_point;
  unsigned threads = 0;
};

// --- confidence -------------------------------------------------------------

// Lookup from a shallow A cell to the B cell it was matched with.
class ShallowMatchIndex {
 public:
  explicit ShallowMatchIndex(const MatchSet& set) : width_a_(set.width_a), width_b_(set.width_b) {
    for (const Match& m : set.matches) pairs_.emplace(key(m.a, width_a_), key(m.b, width_b_));
  }

  bool contains(CellCoord a, CellCoord b) const {
    const auto it = pairs_.find(key(a, width_a_));
    return it != pairs_.end() && it->second == key(b, width_b_);
  }

 private:
  static long long key(CellCoord c, int width) { return static_cast<long long>(c.h) * width + c.w; }

  int width_a_;
  int width_b_;
  std::unordered_map<long long, long long> pairs_;
};

struct ConfidenceScore {
  double value = 0.0;
  bool partial = false;  // some of the footprint fell outside a shallow map
};

// Sum over aligned shallow-cell pairs (q_a, q_b) inside the two footprints of
// m_ij / max(d_ij, epsilon), where m_ij = 1 iff (q_a, q_b) is in the shallow
// match set and d_ij is their descriptor distance.
inline ConfidenceScore confidence_score(const Match& match, double deep_scale, const FeatureMap& shallow_a,
                                        const FeatureMap& shallow_b, const ShallowMatchIndex& shallow_matches,
                                        double epsilon) {
  const double ratio = deep_scale / shallow_a.scale;
  const int s = static_cast<int>(std::lround(ratio));
  if (s < 2 || std::abs(ratio - s) > 1e-9 || shallow_a.scale != shallow_b.scale) {
    throw Error(ErrorCode::InvalidArgument, "confidence needs a deeper layer whose scale is an integer multiple");
  }
  if (!(epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  ConfidenceScore out;
  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      const CellCoord qa{match.a.h * s + i, match.a.w * s + j};
      const CellCoord qb{match.b.h * s + i, match.b.w * s + j};
      if (!shallow_a.contains(qa) || !shallow_b.contains(qb)) {
        out.partial = true;
        continue;
      }
      if (!shallow_matches.contains(qa, qb)) continue;
      const double d = descriptor_distance(shallow_a.descriptor(qa), shallow_b.descriptor(qb));
      out.value += 1.0 / std::max(d, epsilon);
    }
  }
  return out;
}

inline ConfidenceScore confidence_score(const Match& match, double deep_scale, const FeatureMap& shallow_a,
                                        const FeatureMap& shallow_b, const MatchSet& shallow_matches,
                                        double epsilon) {
  return confidence_score(match, deep_scale, shallow_a, shallow_b, ShallowMatchIndex(shallow_matches), epsilon);
}

// Strict weak order used for seeding: confidence desc, distance asc, A cell
// row-major asc.
inline bool more_confident(const Match& x, const Match& y) {
  const double cx = x.confidence.value_or(0.0);
  const double cy = y.confidence.value_or(0.0);
  if (cx != cy) return cx > cy;
  if (x.distance != y.distance) return x.distance < y.distance;
  return x.a < y.a;
}

inline std::vector<Match> select_top_confident(std::span<const Match> matches, int k = 8) {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be positive");
  if (matches.size() < static_cast<std::size_t>(k)) {
    throw Error(ErrorCode::InsufficientMatches,
                "need " + std::to_string(k) + " scored matches, have " + std::to_string(matches.size()));
  }
  for (const Match& m : matches) {
    if (!m.confidence) throw Error(ErrorCode::InvalidArgument, "every match needs a confidence score");
  }
  std::vector<Match> out(matches.begin(), matches.end());
  std::partial_sort(out.begin(), out.begin() + k, out.end(), more_confident);
  out.resize(static_cast<std::size_t>(k));
  return out;
}

// --- epipolar filtering ------------------------------------------------------

inline Correspondence to_pixels(const Match& m, const FeatureMap& map_a, const FeatureMap& map_b) {
  return {layer_to_image(m.a, map_a), layer_to_image(m.b, map_b)};
}

// Keeps the matches whose cell-center Sampson distance under F is at most
// `threshold` (px^2), preserving order.
inline MatchSet filter_by_epipolar(const MatchSet& matches, const FundamentalMatrix& f, double threshold,
                                   const FeatureMap& map_a, const FeatureMap& map_b) {
  MatchSet out{matches.layer, {}, matches.height_a, matches.width_a, matches.height_b, matches.width_b};
  for (const Match& m : matches.matches) {
    const Correspondence c = to_pixels(m, map_a, map_b);
    if (sampson_distance(f, c.a, c.b) <= threshold) out.matches.push_back(m);
  }
  return out;
}

// --- cascade ----------------------------------------------------------------

struct LayerDiagnostics {
  int layer = 0;
  double scale = 1.0;
  std::size_t candidates = 0;  // matches before epipolar filtering
  std::size_t retained = 0;    // after
  double inlier_ratio = 0.0;
  double sampson_threshold = 0.0;
  bool epipolar_filtered = false;  // false when no well-conditioned F existed yet
  bool estimated = false;          // a new F was adopted at this layer
  bool fallback = false;           // fewer than min_matches survived; previous F kept
  bool ill_conditioned = false;    // the estimate attempted at this layer was flagged
  double conditioning = 0.0;
  std::optional<FundamentalMatrix> fundamental;  // F in effect after this layer
};

struct FinalMatch {
  PixelPoint a;
  PixelPoint b;
  CellCoord cell_a;
  CellCoord cell_b;
  double distance = 0.0;
  double confidence = 0.0;  // 1 / max(distance, epsilon): the single-cell form of the deep score
};

struct CascadeResult {
  std::vector<FinalMatch> matches;
  FundamentalMatrix fundamental;
  std::optional<EssentialMatrix> essential;
  bool degenerate = false;  // no well-conditioned estimate was ever obtained
  std::size_t final_filter_removed = 0;
  std::vector<LayerDiagnostics> layers;  // deepest first
  std::vector<MatchSet> layer_matches;   // retained matches per selected layer, deepest first

  std::vector<Correspondence> correspondences() const {
    std::vector<Correspondence> out;
    out.reserve(matches.size());
    for (const auto& m : matches) out.push_back({m.a, m.b});
    return out;
  }
};

// Raised when the cascade cannot run to completion; carries what was
// computed up to that point.
class CascadeError : public Error {
 public:
  CascadeError(ErrorCode code, const std::string& what, std::vector<LayerDiagnostics> diagnostics)
      : Error(code, what), diagnostics_(std::move(diagnostics)) {}

  const std::vector<LayerDiagnostics>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<LayerDiagnostics> diagnostics_;
};

namespace detail {

struct EpipolarEstimate {
  FundamentalMatrix fundamental;
  std::optional<EssentialMatrix> essential;
  double conditioning = 0.0;
  bool ill_conditioned = false;
};

inline EpipolarEstimate estimate_epipolar(std::span<const Correspondence> pixels, const CascadeConfig& cfg) {
  if (!cfg.intrinsics) {
    const EightPointEstimate e = estimate_fundamental(pixels, cfg.eight_point);
    return {e.fundamental, std::nullopt, e.conditioning, e.ill_conditioned};
  }
  const auto& k = *cfg.intrinsics;
  std::vector<Correspondence> calibrated;
  calibrated.reserve(pixels.size());
  for (const auto& c : pixels) calibrated.push_back({k.a.to_calibrated(c.a), k.b.to_calibrated(c.b)});
  const EightPointEstimate e = estimate_fundamental(calibrated, cfg.eight_point);
  const EssentialMatrix ess = project_to_essential(e.fundamental.matrix());
  return {fundamental_from_essential(ess.matrix(), k.a, k.b), ess, e.conditioning, e.ill_conditioned};
}

inline std::vector<Correspondence> pixel_pairs(std::span<const Match> matches, const FeatureMap& a,
                                               const FeatureMap& b) {
  std::vector<Correspondence> out;
  out.reserve(matches.size());
  for (const Match& m : matches) out.push_back(to_pixels(m, a, b));
  return out;
}

inline std::vector<int> selected_layers(const FeaturePyramid& pyr, const CascadeConfig& cfg) {
  std::vector<int> sel = cfg.layers;
  if (sel.empty()) {
    for (int l = static_cast<int>(pyr.size()) - 1; l >= 0; --l) sel.push_back(l);
  }
  return sel;
}

inline void validate_cascade(const FeaturePyramid& pa, const FeaturePyramid& pb, const CascadeConfig& cfg,
                             const std::vector<int>& sel) {
  pa.validate();
  pb.validate();
  if (pa.size() != pb.size()) throw Error(ErrorCode::InvalidArgument, "pyramids have different layer counts");
  for (std::size_t l = 0; l < pa.size(); ++l) {
    if (pa[l].scale != pb[l].scale || pa[l].channels != pb[l].channels) {
      throw Error(ErrorCode::InvalidArgument, "pyramids disagree on layer " + std::to_string(l));
    }
  }
  if (sel.size() < 2) throw Error(ErrorCode::InvalidArgument, "the cascade needs at least two layers");
  for (std::size_t k = 0; k < sel.size(); ++k) {
    if (sel[k] < 0 || sel[k] >= static_cast<int>(pa.size())) {
      throw Error(ErrorCode::InvalidArgument, "selected layer " + std::to_string(sel[k]) + " is not in the pyramid");
    }
    if (k > 0) {
      if (sel[k] >= sel[k - 1]) throw Error(ErrorCode::InvalidArgument, "layers must be listed deepest first");
      const double r = pa[sel[k - 1]].scale / pa[sel[k]].scale;
      if (std::abs(r - std::round(r)) > 1e-9 || std::round(r) < 2.0) {
        throw Error(ErrorCode::InvalidArgument, "consecutive selected layers need an integer scale ratio >= 2");
      }
    }
  }
  auto check_list = [&](const std::vector<double>& v, const char* name, double hi) {
    if (!v.empty() && v.size() != sel.size()) {
      throw Error(ErrorCode::InvalidArgument, std::string(name) + " needs one value per selected layer");
    }
    for (double x : v) {
      if (!(x > 0.0) || x > hi) throw Error(ErrorCode::InvalidArgument, std::string(name) + " out of range");
    }
  };
  check_list(cfg.ratio_thresholds, "ratio_thresholds", 1.0);
  check_list(cfg.sampson_thresholds, "sampson_thresholds", std::numeric_limits<double>::infinity());
  if (!(cfg.ratio_threshold > 0.0) || cfg.ratio_threshold > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "ratio threshold must lie in (0, 1]");
  }
  if (!(cfg.sampson_threshold > 0.0)) throw Error(ErrorCode::InvalidArgument, "Sampson threshold must be positive");
  if (cfg.top_k < 8) throw Error(ErrorCode::InvalidArgument, "top_k must be at least 8");
  if (cfg.min_matches < 8) throw Error(ErrorCode::InvalidArgument, "min_matches must be at least 8");
  if (!(cfg.epsilon > 0.0)) throw Error(ErrorCode::InvalidArgument, "epsilon must be positive");
  if (cfg.margin < 0) throw Error(ErrorCode::InvalidArgument, "margin must be non-negative");
  if (cfg.intrinsics) {
    cfg.intrinsics->a.validate();
    cfg.intrinsics->b.validate();
  }
}

}  // namespace detail

inline MatchSet with_confidence(MatchSet set, std::span<const double> scores) {
  for (std::size_t i = 0; i < set.matches.size(); ++i) set.matches[i].confidence = scores[i];
  return set;
}

inline CascadeResult cascade_match(const FeaturePyramid& pyr_a, const FeaturePyramid& pyr_b,
                                   const CascadeConfig& cfg = {}) {
  const std::vector<int> sel = detail::selected_layers(pyr_a, cfg);
  detail::validate_cascade(pyr_a, pyr_b, cfg, sel);
  const std::size_t n = sel.size();
  auto ratio_at = [&](std::size_t k) { return cfg.ratio_thresholds.empty() ? cfg.ratio_threshold : cfg.ratio_thresholds[k]; };
  auto sampson_at = [&](std::size_t k) {
    if (!cfg.sampson_thresholds.empty()) return cfg.sampson_thresholds[k];
    const double rel = pyr_a[sel[k]].scale / pyr_a[sel.back()].scale;
    return cfg.sampson_threshold * rel * rel;
  };

  std::vector<LayerDiagnostics> diags;
  std::vector<MatchSet> kept_per_layer;

  // Deepest layer: unrestricted matching.
  const FeatureMap& deep_a = pyr_a[sel[0]];
  const FeatureMap& deep_b = pyr_b[sel[0]];
  MatchSet current = dense_nn_match(deep_a, deep_b, {ratio_at(0), cfg.mutual, cfg.threads});

  LayerDiagnostics d0;
  d0.layer = sel[0];
  d0.scale = deep_a.scale;
  d0.candidates = d0.retained = current.size();
  d0.inlier_ratio = current.empty() ? 0.0 : 1.0;
  if (current.size() < 8) {
    diags.push_back(d0);
    throw CascadeError(ErrorCode::InsufficientSeedMatches,
                       "only " + std::to_string(current.size()) + " matches at the deepest layer " +
                           std::to_string(sel[0]),
                       diags);
  }

  // Shallow matches supporting the confidence score.
  const FeatureMap& shallow_a = pyr_a[sel.back()];
  const FeatureMap& shallow_b = pyr_b[sel.back()];
  const int s = static_cast<int>(std::lround(deep_a.scale / shallow_a.scale));
  MatchSet support;
  const MatchOptions shallow_opts{ratio_at(n - 1), cfg.mutual, cfg.threads};
  if (cfg.confidence_support == ConfidenceSupport::global) {
    support = dense_nn_match(shallow_a, shallow_b, shallow_opts);
  } else {
    CandidateMask mask(shallow_a, shallow_b);
    for (const Match& m : current.matches) {
      for (int i = 0; i < s; ++i) {
        for (int j = 0; j < s; ++j) {
          const CellCoord qa{m.a.h * s + i, m.a.w * s + j};
          if (!shallow_a.contains(qa)) continue;
          mask.allow_window(qa, m.b.h * s, m.b.w * s, m.b.h * s + s - 1, m.b.w * s + s - 1);
        }
      }
    }
    support = dense_nn_match(shallow_a, shallow_b, shallow_opts, &mask);
  }
  const ShallowMatchIndex support_index(support);
  for (Match& m : current.matches) {
    m.confidence = confidence_score(m, deep_a.scale, shallow_a, shallow_b, support_index, cfg.epsilon).value;
  }

  const int k = std::min<int>(cfg.top_k, static_cast<int>(current.size()));
  const std::vector<Match> seeds = select_top_confident(current.matches, k);
  std::optional<detail::EpipolarEstimate> seed;
  try {
    seed = detail::estimate_epipolar(detail::pixel_pairs(seeds, deep_a, deep_b), cfg);
  } catch (const Error& e) {
    diags.push_back(d0);
    throw CascadeError(e.code(), "seed estimate at layer " + std::to_string(sel[0]) + ": " + e.what(), diags);
  }
  FundamentalMatrix f_current = seed->fundamental;
  std::optional<EssentialMatrix> e_current = seed->essential;
  bool usable = !seed->ill_conditioned;
  d0.estimated = true;
  d0.ill_conditioned = seed->ill_conditioned;
  d0.conditioning = seed->conditioning;
  d0.fundamental = f_current;
  diags.push_back(d0);
  kept_per_layer.push_back(current);

  for (std::size_t li = 1; li < n; ++li) {
    const FeatureMap& parent_a = pyr_a[sel[li - 1]];
    const FeatureMap& child_a = pyr_a[sel[li]];
    const FeatureMap& child_b = pyr_b[sel[li]];
    const int r = static_cast<int>(std::lround(parent_a.scale / child_a.scale));

    // Children of each surviving A cell may only match the children of its
    // partner B cell, plus a margin ring.
    CandidateMask mask(child_a, child_b);
    for (const Match& m : current.matches) {
      for (int i = 0; i < r; ++i) {
        for (int j = 0; j < r; ++j) {
          const CellCoord ca{m.a.h * r + i, m.a.w * r + j};
          if (!child_a.contains(ca)) continue;
          mask.allow_window(ca, m.b.h * r - cfg.margin, m.b.w * r - cfg.margin, m.b.h * r + r - 1 + cfg.margin,
                            m.b.w * r + r - 1 + cfg.margin);
        }
      }
    }
    const MatchSet candidates = dense_nn_match(child_a, child_b, {ratio_at(li), cfg.mutual, cfg.threads}, &mask);

    LayerDiagnostics d;
    d.layer = sel[li];
    d.scale = child_a.scale;
    d.sampson_threshold = sampson_at(li);
    d.candidates = candidates.size();
    d.epipolar_filtered = usable;
    MatchSet kept = usable ? filter_by_epipolar(candidates, f_current, d.sampson_threshold, child_a, child_b)
                           : candidates;
    d.retained = kept.size();
    d.inlier_ratio = candidates.empty() ? 0.0 : static_cast<double>(kept.size()) / candidates.size();

    if (kept.size() >= static_cast<std::size_t>(cfg.min_matches)) {
      std::optional<detail::EpipolarEstimate> est;
      try {
        est = detail::estimate_epipolar(detail::pixel_pairs(kept.matches, child_a, child_b), cfg);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::DegenerateInput) throw;
      }
      if (est) {
        d.ill_conditioned = est->ill_conditioned;
        d.conditioning = est->conditioning;
        if (!est->ill_conditioned || !usable) {
          f_current = est->fundamental;
          e_current = est->essential;
          usable = usable || !est->ill_conditioned;
          d.estimated = true;
        }
      } else {
        d.fallback = true;
      }
    } else {
      d.fallback = true;
    }
    d.fundamental = f_current;
    diags.push_back(d);
    kept_per_layer.push_back(kept);
    current = std::move(kept);
  }

  // Final pass so every output match satisfies the threshold under the
  // returned matrix.
  const FeatureMap& final_a = pyr_a[sel.back()];
  const FeatureMap& final_b = pyr_b[sel.back()];
  const double final_threshold = sampson_at(n - 1);
  const MatchSet final_set = filter_by_epipolar(current, f_current, final_threshold, final_a, final_b);

  CascadeResult result{{}, f_current, e_current, !usable, current.size() - final_set.size(), std::move(diags),
                       std::move(kept_per_layer)};
  result.matches.reserve(final_set.size());
  for (const Match& m : final_set.matches) {
    const Correspondence c = to_pixels(m, final_a, final_b);
    result.matches.push_back({c.a, c.b, m.a, m.b, m.distance, 1.0 / std::max(m.distance, cfg.epsilon)});
  }
  return result;
}

}  // namespace e3cm
