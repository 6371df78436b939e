#pragma once

// Dataset adapters: HPatches sequence directories and JSON-lines pose pair
// lists.

#include <json.hpp>

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "e3cm/error.hpp"
#include "e3cm/eval.hpp"
#include "e3cm/geometry.hpp"

namespace e3cm {

namespace fs = std::filesystem;

// Reads a 3x3 matrix written as whitespace-separated ASCII, row-major.
inline Mat3 read_matrix_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  std::vector<double> values;
  std::string token;
  while (in >> token) {
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      values.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedMatrix, path.string() + ": not a number: '" + token + "'");
    }
  }
  if (values.size() != 9) {
    throw Error(ErrorCode::MalformedMatrix,
                path.string() + ": expected 9 values, found " + std::to_string(values.size()));
  }
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = values[i];
  return m;
}

inline void write_matrix_file(const fs::path& path, const Mat3& m) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.precision(17);
  for (int r = 0; r < 3; ++r) out << m(r, 0) << ' ' << m(r, 1) << ' ' << m(r, 2) << '\n';
}

struct HPatchesPair {
  int target = 0;  // image index k of the pair (1, k)
  fs::path image;
  std::optional<Homography> h;  // unset when the pair was skipped
  std::string warning;
};

struct HPatchesSequence {
  std::string name;
  fs::path reference;
  std::vector<HPatchesPair> pairs;

  bool viewpoint() const { return name.starts_with("v_"); }
  bool illumination() const { return name.starts_with("i_"); }
};

namespace detail {

inline std::optional<fs::path> find_image(const fs::path& dir, int index) {
  for (const char* ext : {".ppm", ".png", ".jpg", ".jpeg", ".pgm"}) {
    const fs::path p = dir / (std::to_string(index) + ext);
    if (fs::is_regular_file(p)) return p;
  }
  return std::nullopt;
}

}  // namespace detail

// Loads sequence directory `dir`: images 1..6 and homographies H_1_2..H_1_6.
// Missing files always throw MissingFile. A malformed or singular matrix
// throws MalformedMatrix, or with `lenient` leaves that pair without a
// homography and records the reason in its warning.
inline HPatchesSequence load_hpatches_sequence(const fs::path& dir, bool lenient = false) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::MissingFile, "not a directory: " + dir.string());
  HPatchesSequence seq;
  seq.name = dir.filename().string();
  if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
  const auto ref = detail::find_image(dir, 1);
  if (!ref) throw Error(ErrorCode::MissingFile, "missing image " + (dir / "1.ppm").string());
  seq.reference = *ref;
  for (int k = 2; k <= 6; ++k) {
    const auto img = detail::find_image(dir, k);
    if (!img) throw Error(ErrorCode::MissingFile, "missing image " + (dir / (std::to_string(k) + ".ppm")).string());
    const fs::path hp = dir / ("H_1_" + std::to_string(k));
    if (!fs::is_regular_file(hp)) throw Error(ErrorCode::MissingFile, "missing homography " + hp.string());
    HPatchesPair pair{k, *img, std::nullopt, {}};
    try {
      const Mat3 m = read_matrix_file(hp);
      try {
        pair.h = make_homography(m);
      } catch (const Error& e) {
        throw Error(ErrorCode::MalformedMatrix, hp.string() + ": " + e.what());
      }
    } catch (const Error& e) {
      if (!lenient || e.code() != ErrorCode::MalformedMatrix) throw;
      pair.warning = e.what();
    }
    seq.pairs.push_back(std::move(pair));
  }
  return seq;
}

// Sequence directories directly under `root`, sorted by name.
inline std::vector<fs::path> list_sequences(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::MissingFile, "not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

struct PosePair {
  fs::path image_a;
  fs::path image_b;
  PoseGT gt;
};

namespace detail {

inline Mat3 json_mat3(const nlohmann::json& j, const char* field, std::size_t line) {
  const auto bad = [&](const std::string& why) {
    return Error(ErrorCode::MalformedRecord, "line " + std::to_string(line) + ": field " + field + " " + why);
  };
  if (!j.contains(field)) throw bad("is missing");
  const nlohmann::json& v = j.at(field);
  std::vector<double> flat;
  if (!v.is_array()) throw bad("must be an array");
  for (const auto& row : v) {
    if (row.is_array()) {
      if (row.size() != 3) throw bad("rows must have 3 entries");
      for (const auto& x : row) {
        if (!x.is_number()) throw bad("must contain numbers");
        flat.push_back(x.get<double>());
      }
    } else if (row.is_number()) {
      flat.push_back(row.get<double>());
    } else {
      throw bad("must contain numbers");
    }
  }
  if (flat.size() != 9) throw bad("must hold 9 values");
  Mat3 m;
  for (int i = 0; i < 9; ++i) m(i / 3, i % 3) = flat[i];
  if (!m.allFinite()) throw bad("must be finite");
  return m;
}

}  // namespace detail

// One JSON object per line: {imgA, imgB, KA, KB, R, t}. Matrices are nested
// 3x3 arrays or flat row-major 9-arrays. Relative image paths resolve
// against the list file's directory. Blank lines are ignored. The
// translation is normalized to unit length and R is projected onto SO(3)
// after checking it is orthonormal to 1e-6.
inline std::vector<PosePair> load_pose_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  const fs::path base = path.parent_path();
  std::vector<PosePair> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto bad = [&](const std::string& why) {
      return Error(ErrorCode::MalformedRecord, "line " + std::to_string(line) + ": " + why);
    };
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw bad(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw bad("record is not an object");
    for (const char* f : {"imgA", "imgB"}) {
      if (!j.contains(f) || !j.at(f).is_string()) throw bad(std::string("field ") + f + " must be a string");
    }
    if (!j.contains("t") || !j.at("t").is_array() || j.at("t").size() != 3) throw bad("field t must hold 3 values");
    Vec3 t;
    for (int i = 0; i < 3; ++i) {
      if (!j.at("t")[i].is_number()) throw bad("field t must contain numbers");
      t(i) = j.at("t")[i].get<double>();
    }
    if (!t.allFinite() || !(t.norm() > 0.0)) throw bad("translation must be finite and nonzero");

    const Mat3 r = detail::json_mat3(j, "R", line);
    if (!(r.transpose() * r - Mat3::Identity()).isZero(1e-6) || std::abs(r.determinant() - 1.0) > 1e-6) {
      throw bad("R is not a rotation");
    }
    const Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Mat3 rot = svd.matrixU() * svd.matrixV().transpose();

    PosePair p;
    try {
      p.gt.ka = CameraIntrinsics::from_matrix(detail::json_mat3(j, "KA", line));
      p.gt.kb = CameraIntrinsics::from_matrix(detail::json_mat3(j, "KB", line));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::MalformedRecord) throw;
      throw bad(e.what());
    }
    p.gt.pose = RelativePose{rot, t.normalized()};
    const fs::path a = j.at("imgA").get<std::string>();
    const fs::path b = j.at("imgB").get<std::string>();
    p.image_a = a.is_absolute() ? a : base / a;
    p.image_b = b.is_absolute() ? b : base / b;
    out.push_back(std::move(p));
  }
  return out;
}

// Writes records in the format load_pose_pairs reads. Absolute image paths
// under the list file's directory are written relative to it.
inline void write_pose_pairs(const fs::path& path, const std::vector<PosePair>& pairs) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  const fs::path base = path.parent_path();
  auto mat = [](const Mat3& m) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
    return rows;
  };
  auto rel = [&](const fs::path& p) {
    if (p.is_absolute() && !base.empty()) {
      const fs::path r = p.lexically_relative(base);
      if (!r.empty() && *r.begin() != "..") return r.generic_string();
    }
    return p.generic_string();
  };
  for (const PosePair& p : pairs) {
    const Vec3& t = p.gt.pose.translation;
    nlohmann::ordered_json j;
    j["imgA"] = rel(p.image_a);
    j["imgB"] = rel(p.image_b);
    j["KA"] = mat(p.gt.ka.matrix());
    j["KB"] = mat(p.gt.kb.matrix());
    j["R"] = mat(p.gt.pose.rotation);
    j["t"] = {t.x(), t.y(), t.z()};
    out << j.dump() << '\n';
  }
}

}  // namespace e3cm
