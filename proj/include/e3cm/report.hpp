#pragma once

// Metric reports: per-pair records plus dataset-level aggregates, written as
// JSON or as CSV rows.

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "e3cm/eval.hpp"

namespace e3cm {

struct PairRecord {
  std::string id;
  std::string subset;  // "viewpoint", "illumination" or empty
  std::size_t match_count = 0;
  bool failed = false;
  std::string note;
  std::vector<std::pair<std::string, double>> metrics;

  double metric(const std::string& name) const {
    for (const auto& [k, v] : metrics) {
      if (k == name) return v;
    }
    return std::numeric_limits<double>::quiet_NaN();
  }
};

struct MetricReport {
  std::string kind;
  std::vector<PairRecord> pairs;  // sorted by id
  nlohmann::ordered_json aggregates = nlohmann::ordered_json::object();
  std::vector<std::string> warnings;
  std::optional<nlohmann::ordered_json> reference;  // published numbers, for full-dataset runs

  void sort_pairs() {
    std::sort(pairs.begin(), pairs.end(), [](const PairRecord& a, const PairRecord& b) { return a.id < b.id; });
  }

  // Non-finite values serialize as null.
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["kind"] = kind;
    j["pair_count"] = pairs.size();
    j["aggregates"] = aggregates;
    if (reference) j["reference"] = *reference;
    j["warnings"] = warnings;
    j["pairs"] = nlohmann::ordered_json::array();
    for (const auto& p : pairs) {
      nlohmann::ordered_json pj;
      pj["id"] = p.id;
      if (!p.subset.empty()) pj["subset"] = p.subset;
      pj["match_count"] = p.match_count;
      pj["failed"] = p.failed;
      nlohmann::ordered_json m = nlohmann::ordered_json::object();
      for (const auto& [k, v] : p.metrics) m[k] = std::isfinite(v) ? nlohmann::ordered_json(v) : nullptr;
      pj["metrics"] = m;
      if (!p.note.empty()) pj["note"] = p.note;
      j["pairs"].push_back(pj);
    }
    return j;
  }

  // One row per pair; metric columns in first-seen order.
  std::string to_csv() const {
    std::vector<std::string> columns;
    for (const auto& p : pairs) {
      for (const auto& [k, v] : p.metrics) {
        if (std::find(columns.begin(), columns.end(), k) == columns.end()) columns.push_back(k);
      }
    }
    std::ostringstream out;
    out << "id,subset,match_count,failed";
    for (const auto& c : columns) out << ',' << c;
    out << ",note\n";
    out << std::setprecision(17);
    for (const auto& p : pairs) {
      out << csv_field(p.id) << ',' << p.subset << ',' << p.match_count << ',' << (p.failed ? 1 : 0);
      for (const auto& c : columns) {
        out << ',';
        const double v = p.metric(c);
        if (std::isnan(v)) {
          out << "nan";
        } else if (std::isinf(v)) {
          out << (v > 0 ? "inf" : "-inf");
        } else {
          out << v;
        }
      }
      out << ',' << csv_field(p.note) << '\n';
    }
    return out.str();
  }

 private:
  static std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char c : s) {
      if (c == '"') q += '"';
      q += c;
    }
    return q + "\"";
  }
};

// Per-pair HPatches record: MMA at 1..10 px and homography accuracy at
// 1/3/5 px. A pair without a usable match set scores 0 everywhere.
inline PairRecord hpatches_record(std::string id, std::string subset, std::span<const Correspondence> matches,
                                  const Homography& gt, double width, double height) {
  PairRecord r;
  r.id = std::move(id);
  r.subset = std::move(subset);
  r.match_count = matches.size();
  const auto mt = mma_thresholds();
  const FractionResult m = mma(matches, gt, mt);
  for (std::size_t i = 0; i < mt.size(); ++i) {
    r.metrics.emplace_back("mma@" + std::to_string(static_cast<int>(mt[i])), m.values[i]);
  }
  const auto ht = homography_thresholds();
  const HomographyAccuracy acc = homography_accuracy(matches, gt, width, height, ht);
  r.metrics.emplace_back("corner_error", acc.corner_error);
  for (std::size_t i = 0; i < ht.size(); ++i) {
    r.metrics.emplace_back("h@" + std::to_string(static_cast<int>(ht[i])), acc.within[i] ? 1.0 : 0.0);
  }
  if (m.empty) r.note = "no matches";
  r.failed = !acc.estimated;
  return r;
}

// A failed pair (cascade abort, unreadable image) still counts, with zeros.
inline PairRecord hpatches_failure(std::string id, std::string subset, std::string why) {
  PairRecord r;
  r.id = std::move(id);
  r.subset = std::move(subset);
  r.failed = true;
  r.note = std::move(why);
  for (double t : mma_thresholds()) r.metrics.emplace_back("mma@" + std::to_string(static_cast<int>(t)), 0.0);
  r.metrics.emplace_back("corner_error", std::numeric_limits<double>::infinity());
  for (double t : homography_thresholds()) r.metrics.emplace_back("h@" + std::to_string(static_cast<int>(t)), 0.0);
  return r;
}

namespace detail {

inline nlohmann::ordered_json hpatches_subset(const std::vector<const PairRecord*>& rows) {
  nlohmann::ordered_json j;
  j["pairs"] = rows.size();
  nlohmann::ordered_json curve = nlohmann::ordered_json::array();
  for (double t : mma_thresholds()) {
    const std::string key = "mma@" + std::to_string(static_cast<int>(t));
    double s = 0.0;
    for (const auto* r : rows) s += r->metric(key);
    curve.push_back(rows.empty() ? 0.0 : s / rows.size());
  }
  j["mma_thresholds_px"] = mma_thresholds();
  j["mma"] = curve;
  nlohmann::ordered_json acc;
  for (double t : homography_thresholds()) {
    const std::string key = "h@" + std::to_string(static_cast<int>(t));
    double s = 0.0;
    for (const auto* r : rows) s += r->metric(key);
    acc[std::to_string(static_cast<int>(t)) + "px"] = rows.empty() ? 0.0 : s / rows.size();
  }
  j["homography_accuracy"] = acc;
  double matches = 0.0;
  for (const auto* r : rows) matches += static_cast<double>(r->match_count);
  j["mean_matches"] = rows.empty() ? 0.0 : matches / rows.size();
  return j;
}

}  // namespace detail

// Overall, viewpoint and illumination aggregates; pairs must be sorted.
inline nlohmann::ordered_json hpatches_aggregates(const std::vector<PairRecord>& pairs) {
  std::vector<const PairRecord*> all, view, illum;
  for (const auto& p : pairs) {
    all.push_back(&p);
    if (p.subset == "viewpoint") view.push_back(&p);
    if (p.subset == "illumination") illum.push_back(&p);
  }
  nlohmann::ordered_json j;
  j["overall"] = detail::hpatches_subset(all);
  j["viewpoint"] = detail::hpatches_subset(view);
  j["illumination"] = detail::hpatches_subset(illum);
  return j;
}

// Pose AUC at 5/10/20 degrees and mean matching precision. Failed pairs
// enter as +inf error and 0 precision.
inline nlohmann::ordered_json pose_aggregates(const std::vector<PairRecord>& pairs) {
  std::vector<double> errors;
  double precision = 0.0;
  std::size_t with_matches = 0;
  for (const auto& p : pairs) {
    const double e = p.metric("pose_error_deg");
    errors.push_back(std::isnan(e) ? std::numeric_limits<double>::infinity() : e);
    const double pr = p.metric("precision");
    if (std::isfinite(pr)) precision += pr;
    if (p.match_count > 0) ++with_matches;
  }
  const auto th = pose_auc_thresholds();
  const auto auc = pose_auc(errors, th);
  nlohmann::ordered_json j;
  j["pairs"] = pairs.size();
  nlohmann::ordered_json a;
  for (std::size_t i = 0; i < th.size(); ++i) a[std::to_string(static_cast<int>(th[i])) + "deg"] = auc[i];
  j["pose_auc"] = a;
  j["precision"] = pairs.empty() ? 0.0 : precision / pairs.size();
  j["pairs_with_matches"] = with_matches;
  return j;
}

}  // namespace e3cm
