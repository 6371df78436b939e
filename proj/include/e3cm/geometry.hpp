#pragma once

// Two-view geometry: conditioning, eight-point fundamental matrix estimation,
// Sampson distance, essential matrix and relative pose, homography fitting
// and the error metrics built on them. Everything here is a pure function.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "e3cm/error.hpp"

namespace e3cm {

using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;

struct PixelPoint {
  double x = 0.0;
  double y = 0.0;

  Vec3 homogeneous() const { return {x, y, 1.0}; }
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

struct Correspondence {
  PixelPoint a;
  PixelPoint b;
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

namespace detail {

// Frobenius norm 1, first entry (row-major) of largest magnitude positive.
inline Mat3 canonical_scale(const Mat3& m) {
  Mat3 out = m / m.norm();
  int best = 0;
  for (int i = 1; i < 9; ++i) {
    if (std::abs(out(i / 3, i % 3)) > std::abs(out(best / 3, best % 3))) best = i;
  }
  if (out(best / 3, best % 3) < 0.0) out = -out;
  return out;
}

inline Mat3 from_row_major(const Eigen::VectorXd& v) {
  Mat3 m;
  m << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  return m;
}

}  // namespace detail

class FundamentalMatrix;
FundamentalMatrix enforce_rank2(const Mat3& m);

// Rank-2, unit Frobenius norm, largest-magnitude entry positive. The only
// way to obtain one is through enforce_rank2, which establishes all three.
class FundamentalMatrix {
 public:
  const Mat3& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }

 private:
  explicit FundamentalMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;

  friend FundamentalMatrix enforce_rank2(const Mat3& m);
};

class EssentialMatrix;
EssentialMatrix project_to_essential(const Mat3& m);

class EssentialMatrix {
 public:
  const Mat3& matrix() const { return m_; }

 private:
  explicit EssentialMatrix(const Mat3& m) : m_(m) {}
  Mat3 m_;

  friend EssentialMatrix project_to_essential(const Mat3& m);
};

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  double skew = 0.0;

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(cx) || !std::isfinite(cy) ||
        !std::isfinite(skew)) {
      throw Error(ErrorCode::InvalidArgument, "camera intrinsics need fx > 0, fy > 0");
    }
  }

  Mat3 matrix() const {
    Mat3 k;
    k << fx, skew, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
    return k;
  }

  static CameraIntrinsics from_matrix(const Mat3& k) {
    if (std::abs(k(1, 0)) > 1e-12 || std::abs(k(2, 0)) > 1e-12 || std::abs(k(2, 1)) > 1e-12 ||
        std::abs(k(2, 2) - 1.0) > 1e-12) {
      throw Error(ErrorCode::InvalidArgument, "intrinsics matrix must be upper triangular with K(2,2) = 1");
    }
    CameraIntrinsics out{k(0, 0), k(1, 1), k(0, 2), k(1, 2), k(0, 1)};
    out.validate();
    return out;
  }

  // Pixel to calibrated (normalized image plane) coordinates.
  PixelPoint to_calibrated(const PixelPoint& p) const {
    const double y = (p.y - cy) / fy;
    return {(p.x - cx - skew * y) / fx, y};
  }
};

struct RelativePose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::UnitX();

  void validate(double tol = 1e-9) const {
    if ((rotation.transpose() * rotation - Mat3::Identity()).norm() > tol ||
        std::abs(rotation.determinant() - 1.0) > tol) {
      throw Error(ErrorCode::InvalidArgument, "rotation is not a proper orthonormal matrix");
    }
    if (std::abs(translation.norm() - 1.0) > tol) {
      throw Error(ErrorCode::InvalidArgument, "translation must have unit length");
    }
  }
};

class Homography;
Homography make_homography(const Mat3& m);

class Homography {
 public:
  const Mat3& matrix() const { return m_; }

  PixelPoint project(const PixelPoint& p) const {
    const Vec3 v = m_ * p.homogeneous();
    const double scale = std::max({std::abs(v.x()), std::abs(v.y()), 1.0});
    if (std::abs(v.z()) <= 1e-12 * scale) {
      throw Error(ErrorCode::ProjectionAtInfinity, "point maps to the plane at infinity");
    }
    return {v.x() / v.z(), v.y() / v.z()};
  }

  Homography inverse() const { return make_homography(m_.inverse()); }

 private:
  explicit Homography(const Mat3& m) : m_(m) {}
  Mat3 m_;

  friend Homography make_homography(const Mat3& m);
};

// Normalizes so that m(2,2) = 1 when that entry is nonzero, else to unit
// Frobenius norm. Rejects singular matrices.
inline Homography make_homography(const Mat3& m) {
  const double norm = m.norm();
  if (!(norm > 0.0) || !m.allFinite()) {
    throw Error(ErrorCode::DegenerateInput, "homography must be a finite nonzero matrix");
  }
  const Mat3 unit = m / norm;
  if (std::abs(unit.determinant()) < 1e-14) {
    throw Error(ErrorCode::DegenerateInput, "homography is not invertible");
  }
  if (std::abs(unit(2, 2)) > 1e-12) return Homography(m / m(2, 2));
  return Homography(unit);
}

// --- conditioning -----------------------------------------------------------

struct NormalizedPoints {
  std::vector<PixelPoint> points;
  Mat3 transform = Mat3::Identity();  // maps input to output homogeneously
};

// Similarity transform taking the points to centroid (0,0) and mean distance
// sqrt(2) from the origin.
inline NormalizedPoints hartley_normalize(std::span<const PixelPoint> points) {
  if (points.size() < 2) {
    throw Error(ErrorCode::DegenerateInput, "normalization needs at least two points");
  }
  double cx = 0.0, cy = 0.0;
  for (const auto& p : points) {
    cx += p.x;
    cy += p.y;
  }
  const double n = static_cast<double>(points.size());
  cx /= n;
  cy /= n;
  double mean_dist = 0.0;
  for (const auto& p : points) mean_dist += std::hypot(p.x - cx, p.y - cy);
  mean_dist /= n;
  if (!(mean_dist > 0.0) || !std::isfinite(mean_dist)) {
    throw Error(ErrorCode::DegenerateInput, "all points coincide");
  }
  const double s = std::numbers::sqrt2 / mean_dist;

  NormalizedPoints out;
  out.transform << s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0;
  out.points.reserve(points.size());
  for (const auto& p : points) out.points.push_back({s * (p.x - cx), s * (p.y - cy)});
  return out;
}

// --- fundamental matrix -----------------------------------------------------

// Closest rank-2 matrix in Frobenius norm, then the FundamentalMatrix scale
// and sign convention.
inline FundamentalMatrix enforce_rank2(const Mat3& m) {
  if (!m.allFinite() || !(m.norm() > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "cannot enforce rank 2 on a zero or non-finite matrix");
  }
  const Mat3 unit = m / m.norm();
  Eigen::JacobiSVD<Mat3> svd(unit, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Vec3 sv = svd.singularValues();
  sv(2) = 0.0;
  const Mat3 r2 = svd.matrixU() * sv.asDiagonal() * svd.matrixV().transpose();
  return FundamentalMatrix(detail::canonical_scale(r2));
}

// Sign- and scale-invariant distance between two projective 3x3 matrices:
// min(|A - B|, |A + B|) after both are scaled to unit Frobenius norm.
inline double projective_distance(const Mat3& a, const Mat3& b) {
  const Mat3 an = a / a.norm();
  const Mat3 bn = b / b.norm();
  return std::min((an - bn).norm(), (an + bn).norm());
}

struct EightPointOptions {
  // Flag when the two smallest design-matrix singular values are within this
  // ratio of each other (the null space is not one-dimensional).
  double conditioning_bound = 0.95;
  // Also flag when the second-smallest singular value vanishes relative to
  // the largest; catches exactly degenerate data where the ratio is 0/0.
  double rank_tolerance = 1e-8;
};

struct EightPointEstimate {
  FundamentalMatrix fundamental;
  double conditioning = 0.0;  // sigma_9 / sigma_8 of the normalized design matrix
  double relative_gap = 0.0;  // sigma_8 / sigma_1
  bool ill_conditioned = false;
};

// Normalized eight-point least squares over all correspondences. Reports
// conditioning instead of throwing on it; eight_point() is the strict form.
inline EightPointEstimate estimate_fundamental(std::span<const Correspondence> corrs,
                                               const EightPointOptions& opts = {}) {
  if (corrs.size() < 8) {
    throw Error(ErrorCode::DegenerateInput,
                "eight-point needs at least 8 correspondences, got " + std::to_string(corrs.size()));
  }
  std::vector<PixelPoint> pa, pb;
  pa.reserve(corrs.size());
  pb.reserve(corrs.size());
  for (const auto& c : corrs) {
    pa.push_back(c.a);
    pb.push_back(c.b);
  }
  const NormalizedPoints na = hartley_normalize(pa);
  const NormalizedPoints nb = hartley_normalize(pb);

  const Eigen::Index n = static_cast<Eigen::Index>(corrs.size());
  Eigen::MatrixXd design(n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xa = na.points[i].x, ya = na.points[i].y;
    const double xb = nb.points[i].x, yb = nb.points[i].y;
    design.row(i) << xb * xa, xb * ya, xb, yb * xa, yb * ya, yb, xa, ya, 1.0;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  const double s1 = s(0);
  const double s8 = s(7);
  const double s9 = s.size() > 8 ? s(8) : 0.0;

  const double conditioning = s8 > 0.0 ? s9 / s8 : 1.0;
  const double gap = s1 > 0.0 ? s8 / s1 : 0.0;

  const Mat3 f_norm = detail::from_row_major(svd.matrixV().col(8));
  // Rank-2 projection in the conditioned frame, then back to pixels.
  const Mat3 f_norm_r2 = enforce_rank2(f_norm).matrix();
  const Mat3 f_pix = nb.transform.transpose() * f_norm_r2 * na.transform;

  EightPointEstimate out{enforce_rank2(f_pix), conditioning, gap, false};
  out.ill_conditioned = conditioning > opts.conditioning_bound || gap < opts.rank_tolerance;
  return out;
}

inline FundamentalMatrix eight_point(std::span<const Correspondence> corrs,
                                     const EightPointOptions& opts = {}) {
  EightPointEstimate est = estimate_fundamental(corrs, opts);
  if (est.ill_conditioned) {
    throw Error(ErrorCode::IllConditioned,
                "design matrix is near-degenerate (sigma9/sigma8 = " + std::to_string(est.conditioning) +
                    ", sigma8/sigma1 = " + std::to_string(est.relative_gap) + ")");
  }
  return est.fundamental;
}

// First-order geometric error of a correspondence under F, in squared pixels.
// Returns +inf when the denominator vanishes (both points at the epipoles).
inline double sampson_distance(const Mat3& f, const PixelPoint& pa, const PixelPoint& pb) {
  const Vec3 xa = pa.homogeneous();
  const Vec3 xb = pb.homogeneous();
  const Vec3 fa = f * xa;
  const Vec3 ftb = f.transpose() * xb;
  const double algebraic = xb.dot(fa);
  const double denom = fa(0) * fa(0) + fa(1) * fa(1) + ftb(0) * ftb(0) + ftb(1) * ftb(1);
  if (denom == 0.0) return std::numeric_limits<double>::infinity();
  return algebraic * algebraic / denom;
}

inline double sampson_distance(const FundamentalMatrix& f, const PixelPoint& pa, const PixelPoint& pb) {
  return sampson_distance(f.matrix(), pa, pb);
}

// --- essential matrix and pose ----------------------------------------------

// Singular values become (sigma, sigma, 0), sigma the mean of the top two.
inline EssentialMatrix project_to_essential(const Mat3& m) {
  if (!m.allFinite() || !(m.norm() > 0.0)) {
    throw Error(ErrorCode::DegenerateInput, "cannot project a zero or non-finite matrix");
  }
  Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 s = svd.singularValues();
  const double sigma = 0.5 * (s(0) + s(1));
  return EssentialMatrix(svd.matrixU() * Vec3(sigma, sigma, 0.0).asDiagonal() *
                         svd.matrixV().transpose());
}

inline EssentialMatrix essential_from_fundamental(const FundamentalMatrix& f, const CameraIntrinsics& ka,
                                                  const CameraIntrinsics& kb) {
  ka.validate();
  kb.validate();
  return project_to_essential(kb.matrix().transpose() * f.matrix() * ka.matrix());
}

// F = K_B^{-T} E K_A^{-1} with the FundamentalMatrix convention applied.
inline FundamentalMatrix fundamental_from_essential(const Mat3& e, const CameraIntrinsics& ka,
                                                    const CameraIntrinsics& kb) {
  ka.validate();
  kb.validate();
  return enforce_rank2(kb.matrix().inverse().transpose() * e * ka.matrix().inverse());
}

// The four (R, t) factorizations of E, in this fixed order:
// (U W V^T, u3), (U W V^T, -u3), (U W^T V^T, u3), (U W^T V^T, -u3).
inline std::array<RelativePose, 4> essential_candidates(const EssentialMatrix& e) {
  Eigen::JacobiSVD<Mat3> svd(e.matrix(), Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU();
  Mat3 v = svd.matrixV();
  if (u.determinant() < 0.0) u = -u;
  if (v.determinant() < 0.0) v = -v;
  Mat3 w;
  w << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;
  const Mat3 r1 = u * w * v.transpose();
  const Mat3 r2 = u * w.transpose() * v.transpose();
  const Vec3 t = u.col(2).normalized();
  return {RelativePose{r1, t}, RelativePose{r1, -t}, RelativePose{r2, t}, RelativePose{r2, -t}};
}

// Depths of a calibrated correspondence along both rays, from
// lambda_b x_b = R lambda_a x_a + t in the least-squares sense.
inline std::array<double, 2> triangulate_depths(const RelativePose& pose, const Correspondence& c) {
  const Vec3 xa = c.a.homogeneous();
  const Vec3 xb = c.b.homogeneous();
  Eigen::Matrix<double, 3, 2> a;
  a.col(0) = pose.rotation * xa;
  a.col(1) = -xb;
  const Eigen::Vector2d depths = a.colPivHouseholderQr().solve(-pose.translation);
  return {depths(0), depths(1)};
}

inline int cheirality_count(const RelativePose& pose, std::span<const Correspondence> calibrated) {
  int count = 0;
  for (const auto& c : calibrated) {
    const auto [da, db] = triangulate_depths(pose, c);
    if (da > 0.0 && db > 0.0) ++count;
  }
  return count;
}

struct DecomposeOptions {
  // When false, a tie on the best cheirality count raises AmbiguousCheirality.
  // When true, the earliest candidate in essential_candidates() order wins.
  bool break_ties = false;
};

// Picks the (R, t) factorization that puts the most calibrated
// correspondences in front of both cameras.
inline RelativePose decompose_essential(const EssentialMatrix& e, std::span<const Correspondence> calibrated,
                                        const DecomposeOptions& opts = {}) {
  if (calibrated.empty()) {
    throw Error(ErrorCode::DegenerateInput, "cheirality check needs at least one correspondence");
  }
  const auto candidates = essential_candidates(e);
  std::array<int, 4> counts{};
  for (std::size_t i = 0; i < candidates.size(); ++i) counts[i] = cheirality_count(candidates[i], calibrated);
  const auto best = std::max_element(counts.begin(), counts.end());
  const auto ties = std::count(counts.begin(), counts.end(), *best);
  if (ties > 1 && !opts.break_ties) {
    throw Error(ErrorCode::AmbiguousCheirality,
                std::to_string(ties) + " candidates tie with " + std::to_string(*best) + " points in front");
  }
  return candidates[static_cast<std::size_t>(best - counts.begin())];
}

inline double rotation_angle_deg(const Mat3& r) {
  const Mat3 skew_part = r - r.transpose();
  const double s = 0.5 * Vec3(skew_part(2, 1), skew_part(0, 2), skew_part(1, 0)).norm();
  const double c = 0.5 * (r.trace() - 1.0);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

// Maximum of the rotation angle between the two rotations and the unsigned
// angle between the translation directions, in degrees.
inline double pose_angular_error(const RelativePose& est, const RelativePose& gt) {
  const double rot = rotation_angle_deg(est.rotation.transpose() * gt.rotation);
  const Vec3 a = est.translation.normalized();
  const Vec3 b = gt.translation.normalized();
  const double trans = std::atan2(a.cross(b).norm(), std::abs(a.dot(b))) * 180.0 / std::numbers::pi;
  return std::max(rot, trans);
}

// --- homography -------------------------------------------------------------

namespace detail {

inline bool collinear(const PixelPoint& p, const PixelPoint& q, const PixelPoint& r) {
  const double cross = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
  const double scale = std::max({std::hypot(q.x - p.x, q.y - p.y), std::hypot(r.x - p.x, r.y - p.y), 1e-300});
  return std::abs(cross) <= 1e-10 * scale * scale;
}

}  // namespace detail

// Normalized DLT; both point sets are conditioned first.
inline Homography homography_dlt(std::span<const Correspondence> corrs) {
  if (corrs.size() < 4) {
    throw Error(ErrorCode::DegenerateInput,
                "homography needs at least 4 correspondences, got " + std::to_string(corrs.size()));
  }
  std::vector<PixelPoint> pa, pb;
  for (const auto& c : corrs) {
    pa.push_back(c.a);
    pb.push_back(c.b);
  }
  if (corrs.size() == 4) {
    for (const auto* pts : {&pa, &pb}) {
      const auto& p = *pts;
      for (int i = 0; i < 4; ++i) {
        if (detail::collinear(p[(i + 1) % 4], p[(i + 2) % 4], p[(i + 3) % 4])) {
          throw Error(ErrorCode::DegenerateInput, "three of the four points are collinear");
        }
      }
    }
  }
  const NormalizedPoints na = hartley_normalize(pa);
  const NormalizedPoints nb = hartley_normalize(pb);

  const Eigen::Index n = static_cast<Eigen::Index>(corrs.size());
  Eigen::MatrixXd design(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = na.points[i].x, y = na.points[i].y;
    const double u = nb.points[i].x, v = nb.points[i].y;
    design.row(2 * i) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
    design.row(2 * i + 1) << x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, -u;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const Eigen::VectorXd& s = svd.singularValues();
  if (!(s(7) > 1e-12 * s(0))) {
    throw Error(ErrorCode::DegenerateInput, "homography design matrix is rank deficient");
  }
  const Mat3 h_norm = detail::from_row_major(svd.matrixV().col(8));
  return make_homography(nb.transform.inverse() * h_norm * na.transform);
}

// Image corners used for the corner-error metric: (0,0), (w-1,0), (0,h-1),
// (w-1,h-1).
inline std::array<PixelPoint, 4> image_corners(double width, double height) {
  return {PixelPoint{0.0, 0.0}, PixelPoint{width - 1.0, 0.0}, PixelPoint{0.0, height - 1.0},
          PixelPoint{width - 1.0, height - 1.0}};
}

// Mean distance between the corners projected by the two homographies.
inline double corner_error(const Homography& est, const Homography& gt, double width, double height) {
  double total = 0.0;
  for (const auto& c : image_corners(width, height)) {
    const PixelPoint pe = est.project(c);
    const PixelPoint pg = gt.project(c);
    total += std::hypot(pe.x - pg.x, pe.y - pg.y);
  }
  return total / 4.0;
}

}  // namespace e3cm
