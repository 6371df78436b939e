#pragma once

// Synthetic oracle suite behind the `selftest` command. Every check derives
// its expected value independently of the code under test; the transcript is
// a pure function of the seed and options.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "e3cm/cascade.hpp"
#include "e3cm/eval.hpp"
#include "e3cm/features.hpp"
#include "e3cm/geometry.hpp"
#include "e3cm/matching.hpp"
#include "e3cm/synth.hpp"

namespace e3cm {

struct SelftestOptions {
  std::uint64_t seed = 1;
  unsigned threads = 0;
  // Test hook: negate every Sampson distance the suite computes.
  bool flip_sampson_sign = false;
};

struct SelftestLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

struct SelftestReport {
  std::uint64_t seed = 0;
  std::vector<SelftestLine> lines;

  bool ok() const {
    for (const auto& l : lines) {
      if (!l.pass) return false;
    }
    return !lines.empty();
  }

  std::string transcript() const {
    std::string out = "selftest seed=" + std::to_string(seed) + "\n";
    for (const auto& l : lines) out += std::string(l.pass ? "PASS " : "FAIL ") + l.name + "  " + l.detail + "\n";
    std::size_t passed = 0;
    for (const auto& l : lines) passed += l.pass ? 1 : 0;
    out += "summary " + std::to_string(passed) + "/" + std::to_string(lines.size()) + " passed\n";
    return out;
  }
};

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Brute-force nearest neighbours with the same tie and ratio rules as
// dense_nn_match, written as a plain double loop.
inline std::vector<std::array<std::size_t, 2>> brute_force_matches(const FeatureMap& a, const FeatureMap& b,
                                                                   double ratio, bool mutual) {
  const std::size_t na = a.cell_count(), nb = b.cell_count();
  std::vector<std::vector<double>> d(na, std::vector<double>(nb));
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) d[i][j] = descriptor_distance(a.descriptor(i), b.descriptor(j));
  }
  std::vector<std::array<std::size_t, 2>> out;
  for (std::size_t i = 0; i < na; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < nb; ++j) {
      if (d[i][j] < d[i][best]) best = j;
    }
    double second = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < nb; ++j) {
      if (j != best) second = std::min(second, d[i][j]);
    }
    const double r = std::isinf(second) ? 0.0 : (second == 0.0 ? 1.0 : d[i][best] / second);
    if (!(r < ratio)) continue;
    if (mutual) {
      std::size_t back = 0;
      for (std::size_t k = 1; k < na; ++k) {
        if (d[k][best] < d[back][best]) back = k;
      }
      if (back != i) continue;
    }
    out.push_back({i, best});
  }
  return out;
}

inline FeatureMap random_map(std::mt19937_64& rng, int h, int w, int c, int layer) {
  std::uniform_int_distribution<int> q(-2, 2);  // coarse values make exact ties likely
  FeatureMap m;
  m.layer = layer;
  m.height = h;
  m.width = w;
  m.channels = c;
  m.scale = 1.0;
  m.data.resize(static_cast<std::size_t>(h) * w * c);
  for (float& v : m.data) v = static_cast<float>(q(rng));
  return m;
}

}  // namespace detail

inline SelftestReport run_selftest(const SelftestOptions& opts = {}) {
  SelftestReport rep;
  rep.seed = opts.seed;
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const auto sampson = [&](const Mat3& f, const PixelPoint& a, const PixelPoint& b) {
    const double d = sampson_distance(f, a, b);
    return opts.flip_sampson_sign ? -d : d;
  };
  auto add = [&](std::string name, bool pass, std::string detail) {
    rep.lines.push_back({std::move(name), pass, std::move(detail)});
  };
  auto guarded = [&](const std::string& name, const std::function<void()>& body) {
    try {
      body();
    } catch (const std::exception& e) {
      add(name, false, std::string("exception: ") + e.what());
    }
  };

  guarded("geometry.sampson_hand_case", [&] {
    Mat3 f;
    f << 0, 0, 0, 0, 0, -1, 0, 1, 0;
    // Residual x_B^T F x_A = -1; gradient terms (F x_A) = (0, -1, 0) and
    // (F^T x_B) = (0, 0, -1) give a denominator of 2.
    const double v = sampson(f, {0, 0}, {0, 1});
    add("geometry.sampson_hand_case", std::abs(v - 0.5) <= 1e-12, "value=" + detail::fmt("%.12f", v));
  });

  guarded("geometry.sampson_nonnegative_and_scale_invariant", [&] {
    int negative = 0, drift = 0;
    for (int i = 0; i < 100; ++i) {
      Mat3 f;
      for (int k = 0; k < 9; ++k) f(k / 3, k % 3) = unit(rng);
      const PixelPoint a{100 * unit(rng), 100 * unit(rng)}, b{100 * unit(rng), 100 * unit(rng)};
      const double lambda = (unit(rng) < 0 ? -1.0 : 1.0) * std::pow(10.0, 3.0 * unit(rng));
      const double d = sampson(f, a, b);
      const double dl = sampson(lambda * f, a, b);
      negative += d < 0.0 ? 1 : 0;
      drift += std::abs(d - dl) <= 1e-9 * std::max(1.0, std::abs(d)) ? 0 : 1;
    }
    add("geometry.sampson_nonnegative_and_scale_invariant", negative == 0 && drift == 0,
        "negative=" + std::to_string(negative) + " scale_drift=" + std::to_string(drift));
  });

  guarded("geometry.eight_point_recovery", [&] {
    int ok = 0;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const SyntheticScene s = synth_scene(opts.seed * 1000 + i, 12 + i);
      const FundamentalMatrix f = eight_point(s.correspondences);
      const double e = projective_distance(f.matrix(), analytic_fundamental(s.camera.ka, s.camera.kb, s.pose));
      worst = std::max(worst, e);
      ok += e < 1e-6 ? 1 : 0;
      for (const auto& c : s.correspondences) {
        if (!(sampson(s.fundamental.matrix(), c.a, c.b) < 1e-18)) --ok;
      }
    }
    add("geometry.eight_point_recovery", ok == 20, "recovered=" + std::to_string(ok) + "/20 worst=" + detail::fmt("%.2e", worst));
  });

  guarded("geometry.pose_recovery", [&] {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      const SyntheticScene s = synth_scene(opts.seed * 2000 + i, 30);
      std::vector<Correspondence> cal;
      for (const auto& c : s.correspondences) cal.push_back({s.camera.ka.to_calibrated(c.a), s.camera.kb.to_calibrated(c.b)});
      const RelativePose p = decompose_essential(essential_from_fundamental(eight_point(s.correspondences), s.camera.ka, s.camera.kb), cal);
      worst = std::max(worst, pose_angular_error(p, s.pose));
    }
    add("geometry.pose_recovery", worst < 1e-6, "worst_deg=" + detail::fmt("%.2e", worst));
  });

  guarded("geometry.homography_dlt", [&] {
    double worst = 0.0;
    for (int i = 0; i < 10; ++i) {
      Mat3 h;
      h << 1 + 0.1 * unit(rng), 0.1 * unit(rng), 10 * unit(rng), 0.1 * unit(rng), 1 + 0.1 * unit(rng),
          10 * unit(rng), 1e-4 * unit(rng), 1e-4 * unit(rng), 1;
      const Homography gt = make_homography(h);
      std::vector<Correspondence> c;
      for (int k = 0; k < 4 + i; ++k) {
        const PixelPoint p{128 + 120 * unit(rng), 128 + 120 * unit(rng)};
        c.push_back({p, gt.project(p)});
      }
      worst = std::max(worst, corner_error(homography_dlt(c), gt, 256, 256));
    }
    add("geometry.homography_dlt", worst < 1e-6, "worst_corner_px=" + detail::fmt("%.2e", worst));
  });

  guarded("matching.brute_force_oracle", [&] {
    int mismatched = 0;
    for (int i = 0; i < 10; ++i) {
      const bool mutual = i % 2 == 0;
      const FeatureMap a = detail::random_map(rng, 8, 8, 16, 0);
      const FeatureMap b = detail::random_map(rng, 8, 8, 16, 0);
      const MatchSet got = dense_nn_match(a, b, {0.9, mutual, opts.threads});
      const auto want = detail::brute_force_matches(a, b, 0.9, mutual);
      bool same = got.size() == want.size();
      for (std::size_t k = 0; same && k < want.size(); ++k) {
        same = a.index(got.matches[k].a) == want[k][0] && b.index(got.matches[k].b) == want[k][1];
      }
      mismatched += same ? 0 : 1;
    }
    add("matching.brute_force_oracle", mismatched == 0, "mismatched_cases=" + std::to_string(mismatched) + "/10");
  });

  guarded("cascade.homography_end_to_end", [&] {
    const double ang = 0.15 * unit(rng);
    const double sc = 1.0 + 0.08 * unit(rng);
    Mat3 h;
    h << sc * std::cos(ang), -sc * std::sin(ang), 96 + 6 * unit(rng) - 96 * (sc * std::cos(ang) - sc * std::sin(ang)),
        sc * std::sin(ang), sc * std::cos(ang), 96 + 6 * unit(rng) - 96 * (sc * std::sin(ang) + sc * std::cos(ang)),
        5e-5 * unit(rng), 5e-5 * unit(rng), 1.0;
    const WarpedPair wp = textured_warp_pair(opts.seed, 192, 192, h, 2);
    CascadeConfig cfg;
    cfg.threads = opts.threads;
    const CascadeResult r = cascade_match(builtin_pyramid(wp.a, 4), builtin_pyramid(wp.b, 4), cfg);
    const auto corr = r.correspondences();
    const std::vector<double> t{3.0};
    const double within = mma(corr, wp.h, t).values[0];
    add("cascade.homography_end_to_end", corr.size() >= 50 && within >= 0.9,
        "matches=" + std::to_string(corr.size()) + " within_3px=" + detail::fmt("%.4f", within));
  });

  guarded("cascade.epipolar_end_to_end", [&] {
    CameraSpec spec;
    spec.min_rotation_deg = 8.0;
    spec.max_rotation_deg = 12.0;
    const SyntheticScene s = synth_scene(opts.seed, 150, spec);
    const RenderedPair rp = render_scene(s);
    CascadeConfig cfg;
    cfg.threads = opts.threads;
    const CascadeResult r = cascade_match(builtin_pyramid(rp.a, 4), builtin_pyramid(rp.b, 4), cfg);
    int above_threshold = 0;
    double mean_gt = 0.0;
    for (const auto& m : r.matches) {
      above_threshold += sampson(r.fundamental.matrix(), m.a, m.b) <= cfg.sampson_threshold ? 0 : 1;
      mean_gt += sampson(s.fundamental.matrix(), m.a, m.b);
    }
    mean_gt = r.matches.empty() ? 0.0 : mean_gt / r.matches.size();
    const bool pass = !r.degenerate && r.matches.size() >= 50 && above_threshold == 0 && mean_gt >= 0.0 && mean_gt < 0.25;
    add("cascade.epipolar_end_to_end", pass,
        "matches=" + std::to_string(r.matches.size()) + " above_threshold=" + std::to_string(above_threshold) +
            " mean_sampson_vs_truth=" + detail::fmt("%.4f", mean_gt));
  });

  guarded("eval.metric_engines", [&] {
    const std::vector<double> errors{0.0, 10.0};
    const std::vector<double> t10{10.0};
    // CDF is 1/2 on [0, 10): area 5 over width 10.
    const double auc = pose_auc(errors, t10)[0];
    std::vector<double> random_errors;
    for (int i = 0; i < 40; ++i) random_errors.push_back(30.0 * (unit(rng) + 1.0) / 2.0);
    const auto a = pose_auc(random_errors, pose_auc_thresholds());
    const bool monotone = a[0] <= a[1] && a[1] <= a[2];
    const Homography h = make_homography(Mat3::Identity());
    std::vector<Correspondence> shifted;
    for (int i = 0; i < 20; ++i) shifted.push_back({{10.0 * i, 5.0}, {10.0 * i + 2.0, 5.0}});
    const auto m = mma(shifted, h, mma_thresholds());
    const bool mma_ok = m.values[0] == 0.0 && m.values[1] == 1.0 && m.values[9] == 1.0;
    add("eval.metric_engines", std::abs(auc - 0.5) <= 1e-12 && monotone && mma_ok,
        "auc_two_point=" + detail::fmt("%.6f", auc) + " monotone=" + (monotone ? "yes" : "no") +
            " mma_shift2=" + (mma_ok ? "ok" : "bad"));
  });

  return rep;
}

}  // namespace e3cm
