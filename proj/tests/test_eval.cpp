#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "e3cm/eval.hpp"
#include "e3cm/report.hpp"
#include "e3cm/synth.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace e3cm;

namespace {

Mat3 random_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat3 h;
  h << 1 + 0.1 * u(rng), 0.1 * u(rng), 20 * u(rng), 0.1 * u(rng), 1 + 0.1 * u(rng), 20 * u(rng), 1e-4 * u(rng),
      1e-4 * u(rng), 1;
  return h;
}

// Matches that are exact under h, each shifted by a random offset of up to
// `max_shift` pixels.
std::vector<Correspondence> perturbed_matches(std::mt19937_64& rng, const Mat3& h, int n, double max_shift) {
  std::uniform_real_distribution<double> pos(0.0, 400.0), off(-1.0, 1.0), mag(0.0, 1.0);
  std::vector<Correspondence> out;
  for (int i = 0; i < n; ++i) {
    const Vec3 a(pos(rng), pos(rng), 1.0);
    const Vec3 b = h * a;
    const double ang = M_PI * off(rng), r = max_shift * mag(rng);
    out.push_back({{a.x(), a.y()}, {b.x() / b.z() + r * std::cos(ang), b.y() / b.z() + r * std::sin(ang)}});
  }
  return out;
}

}  // namespace

TEST(Mma, AgreesWithDirectCount) {
  std::mt19937_64 rng(301);
  for (int trial = 0; trial < 30; ++trial) {
    const Mat3 h = random_homography(rng);
    const auto m = perturbed_matches(rng, h, 50 + trial, 12.0);
    const auto th = mma_thresholds();
    const FractionResult r = mma(m, make_homography(h), th);
    ASSERT_EQ(r.values.size(), 10u);
    EXPECT_FALSE(r.empty);
    for (std::size_t t = 0; t < th.size(); ++t) {
      EXPECT_NEAR(r.values[t], static_cast<double>(oracle::count_within(m, h, th[t])) / m.size(), 1e-12);
      if (t > 0) {
        EXPECT_GE(r.values[t], r.values[t - 1]);
      }
    }
  }
}

TEST(Mma, EmptyInputScoresZero) {
  const FractionResult r = mma({}, make_homography(Mat3::Identity()), mma_thresholds());
  EXPECT_TRUE(r.empty);
  for (double v : r.values) EXPECT_EQ(v, 0.0);
}

TEST(Mma, ThresholdIsInclusive) {
  const std::vector<Correspondence> m{{{0, 0}, {3, 4}}};
  const std::vector<double> t{5.0, 4.999};
  const FractionResult r = mma(m, make_homography(Mat3::Identity()), t);
  EXPECT_EQ(r.values[0], 1.0);
  EXPECT_EQ(r.values[1], 0.0);
}

TEST(Mma, PointsAtInfinityCountAsWrong) {
  Mat3 h = Mat3::Identity();
  h(2, 0) = 1.0;
  h(2, 2) = 0.0;
  h(0, 2) = 1.0;
  const std::vector<Correspondence> m{{{0, 0}, {0, 0}}};
  EXPECT_TRUE(std::isinf(reprojection_error(make_homography(h), m[0])));
}

TEST(HomographyAccuracy, ExactMatchesAreWithinEveryThreshold) {
  std::mt19937_64 rng(302);
  const Mat3 h = random_homography(rng);
  const auto m = perturbed_matches(rng, h, 30, 0.0);
  const HomographyAccuracy acc = homography_accuracy(m, make_homography(h), 640, 480, homography_thresholds());
  EXPECT_TRUE(acc.estimated);
  EXPECT_LT(acc.corner_error, 1e-6);
  for (bool b : acc.within) EXPECT_TRUE(b);
}

TEST(HomographyAccuracy, TooFewMatchesFail) {
  const std::vector<Correspondence> m{{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{0, 1}, {0, 1}}};
  const HomographyAccuracy acc =
      homography_accuracy(m, make_homography(Mat3::Identity()), 100, 100, homography_thresholds());
  EXPECT_FALSE(acc.estimated);
  EXPECT_TRUE(std::isinf(acc.corner_error));
  for (bool b : acc.within) EXPECT_FALSE(b);
}

TEST(PoseAuc, AgreesWithNumericIntegration) {
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> steps(0, 500);
  std::bernoulli_distribution failed(0.1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> errors;
    for (int i = 0; i < 5 + trial; ++i) {
      // Quantized to 0.05 degrees so the integration grid never straddles a jump.
      errors.push_back(failed(rng) ? std::numeric_limits<double>::infinity() : 0.05 * steps(rng));
    }
    const auto th = pose_auc_thresholds();
    const auto got = pose_auc(errors, th);
    for (std::size_t t = 0; t < th.size(); ++t) {
      EXPECT_NEAR(got[t], oracle::auc_fine_grid(errors, th[t], 0.001), 1e-9) << trial;
    }
    EXPECT_LE(got[0], got[1]);
    EXPECT_LE(got[1], got[2]);
  }
}

TEST(PoseAuc, TwoPointExample) {
  // CDF is 1/2 on [0, 10), so the normalized area is 1/2.
  const std::vector<double> errors{0.0, 10.0};
  const std::vector<double> t{10.0};
  EXPECT_NEAR(pose_auc(errors, t)[0], 0.5, 1e-12);
  EXPECT_NEAR(pose_auc(errors, t)[0], oracle::auc_fine_grid(errors, 10.0, 0.001), 1e-9);
}

TEST(PoseAuc, EdgeCases) {
  const auto th = pose_auc_thresholds();
  for (double v : pose_auc({}, th)) EXPECT_EQ(v, 0.0);
  const std::vector<double> zeros(4, 0.0);
  for (double v : pose_auc(zeros, th)) EXPECT_EQ(v, 1.0);
  const std::vector<double> bad{1.0};
  const std::vector<double> zero_t{0.0};
  EXPECT_E3CM_ERROR(pose_auc(bad, zero_t), ErrorCode::InvalidArgument);
}

TEST(Precision, PoseGroundTruthCountsCorrectMatches) {
  std::mt19937_64 rng(304);
  std::uniform_real_distribution<double> pos(10.0, 240.0);
  for (int trial = 0; trial < 10; ++trial) {
    const SyntheticScene s = synth_scene(100 + trial, 40);
    std::vector<Correspondence> m = s.correspondences;
    for (int i = 0; i < 20; ++i) m.push_back({{pos(rng), pos(rng)}, {pos(rng), pos(rng)}});
    const PoseGT gt{s.camera.ka, s.camera.kb, s.pose};
    // Independent count: symmetric epipolar distance from the ground-truth E.
    const Mat3 e = oracle::cross_matrix(s.pose.translation) * s.pose.rotation;
    std::size_t correct = 0;
    for (const auto& c : m) {
      const Vec3 a((c.a.x - gt.ka.cx) / gt.ka.fx, (c.a.y - gt.ka.cy) / gt.ka.fy, 1.0);
      const Vec3 b((c.b.x - gt.kb.cx) / gt.kb.fx, (c.b.y - gt.kb.cy) / gt.kb.fy, 1.0);
      const Vec3 ea = e * a, etb = e.transpose() * b;
      const double r = b.dot(ea);
      const double d = r * r * (1.0 / ea.head<2>().squaredNorm() + 1.0 / etb.head<2>().squaredNorm());
      correct += d < kEpipolarPrecisionThreshold ? 1 : 0;
    }
    const FractionResult p = matching_precision(m, gt);
    EXPECT_NEAR(p.values[0], static_cast<double>(correct) / m.size(), 1e-12);
    EXPECT_GE(p.values[0], 40.0 / 60.0);
  }
}

TEST(Precision, HomographyDefaultIsThreePixels) {
  const std::vector<Correspondence> m{{{0, 0}, {3, 0}}, {{0, 0}, {3.01, 0}}};
  const PairGroundTruth gt = HomographyGT{make_homography(Mat3::Identity())};
  EXPECT_EQ(matching_precision(m, gt).values[0], 0.5);
  EXPECT_EQ(matching_precision(m, gt, 10.0).values[0], 1.0);
  EXPECT_TRUE(matching_precision({}, gt).empty);
}

TEST(RelativePose, FromExactFundamental) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const SyntheticScene s = synth_scene(seed, 30);
    const auto p = relative_pose_from_fundamental(s.fundamental, s.correspondences, s.camera.ka, s.camera.kb);
    ASSERT_TRUE(p.has_value());
    EXPECT_LT(pose_angular_error(*p, s.pose), 1e-6);
  }
  const SyntheticScene s = synth_scene(1, 10);
  EXPECT_FALSE(relative_pose_from_fundamental(s.fundamental, {}, s.camera.ka, s.camera.kb).has_value());
}

TEST(Ransac, FindsInliersAmongOutliers) {
  std::mt19937_64 rng(305);
  std::uniform_real_distribution<double> pos(10.0, 240.0);
  const SyntheticScene s = synth_scene(7, 60);
  std::vector<Correspondence> m = s.correspondences;
  for (int i = 0; i < 25; ++i) m.push_back({{pos(rng), pos(rng)}, {pos(rng), pos(rng)}});
  const RansacResult r = ransac_fundamental(m, {500, 9, 0.5});
  for (std::size_t i = 0; i < 60; ++i) EXPECT_TRUE(r.mask[i]);
  EXPECT_LE(r.inliers.size(), 60u + 3u);
  // Same seed, same answer.
  EXPECT_EQ(ransac_fundamental(m, {500, 9, 0.5}).mask, r.mask);

  const Mat3 h = random_homography(rng);
  auto hm = perturbed_matches(rng, h, 40, 0.0);
  for (int i = 0; i < 20; ++i) hm.push_back({{pos(rng), pos(rng)}, {pos(rng), pos(rng)}});
  const RansacResult rh = ransac_homography(hm, {300, 1, 1.0});
  for (std::size_t i = 0; i < 40; ++i) EXPECT_TRUE(rh.mask[i]);
  EXPECT_LE(rh.inliers.size(), 42u);
}

TEST(Report, HPatchesRecordAndAggregates) {
  std::mt19937_64 rng(306);
  const Mat3 h = random_homography(rng);
  const auto m = perturbed_matches(rng, h, 40, 2.5);
  std::vector<PairRecord> rows{hpatches_record("v_a/2", "viewpoint", m, make_homography(h), 400, 400),
                               hpatches_failure("i_b/3", "illumination", "unreadable")};
  MetricReport rep{"hpatches", rows, {}, {}, std::nullopt};
  rep.sort_pairs();
  EXPECT_EQ(rep.pairs[0].id, "i_b/3");
  rep.aggregates = hpatches_aggregates(rep.pairs);
  const double mma3 = rows[0].metric("mma@3");
  EXPECT_NEAR(rep.aggregates["overall"]["mma"][2].get<double>(), mma3 / 2.0, 1e-12);
  EXPECT_NEAR(rep.aggregates["viewpoint"]["mma"][2].get<double>(), mma3, 1e-12);
  EXPECT_EQ(rep.aggregates["illumination"]["mma"][2].get<double>(), 0.0);
  EXPECT_EQ(rep.aggregates["overall"]["pairs"].get<int>(), 2);

  const auto j = rep.to_json();
  EXPECT_TRUE(j["pairs"][0]["metrics"]["corner_error"].is_null());
  const std::string csv = rep.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "id,subset,match_count,failed,mma@1,mma@2,mma@3,mma@4,mma@5,mma@6,mma@7,mma@8,mma@9,mma@10,corner_error,"
            "h@1,h@3,h@5,note");
}

TEST(Report, PoseAggregatesCountFailuresAsZero) {
  std::vector<PairRecord> rows(2);
  rows[0].id = "a";
  rows[0].match_count = 10;
  rows[0].metrics = {{"pose_error_deg", 0.0}, {"precision", 0.8}};
  rows[1].id = "b";
  rows[1].failed = true;
  rows[1].metrics = {{"pose_error_deg", std::numeric_limits<double>::infinity()}, {"precision", 0.0}};
  const auto j = pose_aggregates(rows);
  EXPECT_NEAR(j["pose_auc"]["5deg"].get<double>(), 0.5, 1e-12);
  EXPECT_NEAR(j["precision"].get<double>(), 0.4, 1e-12);
  EXPECT_EQ(j["pairs_with_matches"].get<int>(), 1);
}
