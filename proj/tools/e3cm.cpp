// e3cm command-line interface.
//
// Exit codes: 0 success, 1 I/O or configuration error (also a failing
// selftest), 2 too few seed matches at the deepest layer.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "e3cm/cascade.hpp"
#include "e3cm/datasets.hpp"
#include "e3cm/eval.hpp"
#include "e3cm/image_io.hpp"
#include "e3cm/onnx_backend.hpp"
#include "e3cm/parallel.hpp"
#include "e3cm/report.hpp"
#include "e3cm/selftest.hpp"

namespace {

using namespace e3cm;

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitSeed = 2;

// Full-dataset sizes at which reference numbers are printed alongside.
constexpr std::size_t kHPatchesSequences = 116;
constexpr std::size_t kMegaDepthPairs = 1500;

struct RunConfig {
  std::string backend = "builtin:4";
  std::vector<int> layers;
  std::vector<double> ratios;
  std::vector<double> sampson;
  bool mutual = true;
  unsigned threads = 0;
  std::string out;
  std::string format = "json";
  int verbose = 0;

  CascadeConfig cascade(unsigned threads_override) const {
    CascadeConfig c;
    c.layers = layers;
    std::sort(c.layers.begin(), c.layers.end(), std::greater<>());
    c.layers.erase(std::unique(c.layers.begin(), c.layers.end()), c.layers.end());
    if (ratios.size() == 1) {
      c.ratio_threshold = ratios[0];
    } else {
      c.ratio_thresholds = ratios;
    }
    if (sampson.size() == 1) {
      c.sampson_threshold = sampson[0];
    } else {
      c.sampson_thresholds = sampson;
    }
    c.mutual = mutual;
    c.threads = threads_override;
    return c;
  }
};

void add_common(CLI::App* cmd, RunConfig& rc) {
  cmd->add_option("--backend", rc.backend, "Manifest JSON path, or builtin:L")->capture_default_str();
  cmd->add_option("--layers", rc.layers, "Pyramid layer indices to use (default: all)")->delimiter(',');
  cmd->add_option("--ratio", rc.ratios, "Ratio-test threshold, or one per selected layer deepest first")
      ->delimiter(',');
  cmd->add_option("--sampson", rc.sampson,
                  "Sampson threshold in px^2 at the shallowest layer, or one per selected layer deepest first")
      ->delimiter(',');
  cmd->add_flag("--mutual,!--no-mutual", rc.mutual, "Require mutual nearest neighbours")->capture_default_str();
  cmd->add_option("--threads", rc.threads, "Worker threads (0 = all cores)")->capture_default_str();
  cmd->add_option("--out", rc.out, "Output file (default: standard output)");
  cmd->add_option("--format", rc.format, "Output format")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
  cmd->add_flag("-v,--verbose", rc.verbose, "Progress messages on standard error");
}

void write_output(const RunConfig& rc, const std::string& text) {
  if (rc.out.empty()) {
    std::cout << text;
    std::cout.flush();
    return;
  }
  std::ofstream f(rc.out, std::ios::binary);
  if (!f) throw Error(ErrorCode::IoError, "cannot write " + rc.out);
  f << text;
  if (!f) throw Error(ErrorCode::IoError, "failed writing " + rc.out);
}

nlohmann::ordered_json diagnostics_json(const std::vector<LayerDiagnostics>& layers) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& d : layers) {
    nlohmann::ordered_json j;
    j["layer"] = d.layer;
    j["scale"] = d.scale;
    j["candidates"] = d.candidates;
    j["retained"] = d.retained;
    j["inlier_ratio"] = d.inlier_ratio;
    j["sampson_threshold"] = d.sampson_threshold;
    j["epipolar_filtered"] = d.epipolar_filtered;
    j["estimated"] = d.estimated;
    j["fallback"] = d.fallback;
    j["ill_conditioned"] = d.ill_conditioned;
    j["conditioning"] = d.conditioning;
    arr.push_back(j);
  }
  return arr;
}

std::vector<double> row_major(const Mat3& m) {
  std::vector<double> v;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) v.push_back(m(r, c));
  }
  return v;
}

int exit_code_for(const Error& e) {
  return e.code() == ErrorCode::InsufficientSeedMatches || e.code() == ErrorCode::InsufficientMatches ? kExitSeed
                                                                                                        : kExitError;
}

// --- match -------------------------------------------------------------------

int cmd_match(const std::string& path_a, const std::string& path_b, const RunConfig& rc) {
  const FeatureExtractor extract = make_extractor(rc.backend);
  const Image a = load_image(path_a);
  const Image b = load_image(path_b);
  const FeaturePyramid pa = extract(a);
  const FeaturePyramid pb = extract(b);
  const CascadeResult r = cascade_match(pa, pb, rc.cascade(rc.threads));
  if (rc.verbose > 0) {
    std::cerr << "matched " << r.matches.size() << " pairs" << (r.degenerate ? " (degenerate F)" : "") << "\n";
  }

  std::ostringstream out;
  if (rc.format == "json") {
    nlohmann::ordered_json h;
    h["record"] = "header";
    h["F"] = row_major(r.fundamental.matrix());
    h["degenerate"] = r.degenerate;
    h["match_count"] = r.matches.size();
    h["final_filter_removed"] = r.final_filter_removed;
    h["backend"] = rc.backend;
    h["layers"] = diagnostics_json(r.layers);
    out << h.dump() << '\n';
    for (const auto& m : r.matches) {
      nlohmann::ordered_json j;
      j["xA"] = m.a.x;
      j["yA"] = m.a.y;
      j["xB"] = m.b.x;
      j["yB"] = m.b.y;
      j["distance"] = m.distance;
      j["confidence"] = m.confidence;
      out << j.dump() << '\n';
    }
  } else {
    out << "# F";
    for (double v : row_major(r.fundamental.matrix())) out << ' ' << nlohmann::json(v).dump();
    out << "\n# degenerate " << (r.degenerate ? 1 : 0) << "\nxA,yA,xB,yB,distance,confidence\n";
    for (const auto& m : r.matches) {
      out << nlohmann::json(m.a.x).dump() << ',' << nlohmann::json(m.a.y).dump() << ','
          << nlohmann::json(m.b.x).dump() << ',' << nlohmann::json(m.b.y).dump() << ','
          << nlohmann::json(m.distance).dump() << ',' << nlohmann::json(m.confidence).dump() << '\n';
    }
  }
  write_output(rc, out.str());
  return kExitOk;
}

// --- evaluation ----------------------------------------------------------------

// Pairs run concurrently, each cascade single-threaded; results land in a
// fixed slot so the report does not depend on scheduling.
template <typename Job>
std::vector<PairRecord> run_pairs(std::size_t n, unsigned threads, Job&& job) {
  std::vector<PairRecord> records(n);
  parallel_for(n, resolve_threads(threads), [&](std::size_t begin, std::size_t end, unsigned) {
    for (std::size_t i = begin; i < end; ++i) records[i] = job(i);
  });
  return records;
}

std::string emit_report(MetricReport& report, const RunConfig& rc) {
  report.sort_pairs();
  if (rc.format == "csv") return report.to_csv();
  return report.to_json().dump(2) + "\n";
}

int cmd_eval_hpatches(const std::string& root, const RunConfig& rc) {
  const FeatureExtractor extract = make_extractor(rc.backend);
  const std::vector<fs::path> dirs = list_sequences(root);
  if (dirs.empty()) throw Error(ErrorCode::MissingFile, "no sequence directories under " + root);

  struct Job {
    std::string id;
    std::string subset;
    fs::path ref;
    fs::path target;
    std::optional<Homography> h;
  };
  std::vector<Job> jobs;
  MetricReport report;
  report.kind = "hpatches";
  for (const auto& dir : dirs) {
    HPatchesSequence seq;
    try {
      seq = load_hpatches_sequence(dir, true);
    } catch (const Error& e) {
      report.warnings.push_back(std::string("skipped sequence: ") + e.what());
      continue;
    }
    const std::string subset = seq.viewpoint() ? "viewpoint" : seq.illumination() ? "illumination" : "";
    for (const auto& p : seq.pairs) {
      const std::string id = seq.name + "/1-" + std::to_string(p.target);
      if (!p.h) {
        report.warnings.push_back("skipped pair " + id + ": " + p.warning);
        continue;
      }
      jobs.push_back({id, subset, seq.reference, p.image, p.h});
    }
  }
  if (jobs.empty()) throw Error(ErrorCode::MissingFile, "no usable image pairs under " + root);

  report.pairs = run_pairs(jobs.size(), rc.threads, [&](std::size_t i) {
    const Job& job = jobs[i];
    try {
      const Image a = load_image(job.ref);
      const Image b = load_image(job.target);
      const CascadeResult r = cascade_match(extract(a), extract(b), rc.cascade(1));
      const auto corr = r.correspondences();
      return hpatches_record(job.id, job.subset, corr, *job.h, a.width, a.height);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError || e.code() == ErrorCode::ModelLoadError) throw;
      return hpatches_failure(job.id, job.subset, e.what());
    }
  });
  report.sort_pairs();
  report.aggregates = hpatches_aggregates(report.pairs);
  if (dirs.size() >= kHPatchesSequences) {
    report.reference = nlohmann::ordered_json{{"source", "reference homography accuracy (full HPatches, VGG19 backbone)"},
                                              {"homography_accuracy", {{"1px", 0.49}, {"3px", 0.78}, {"5px", 0.88}}}};
    const auto& acc = report.aggregates["overall"]["homography_accuracy"];
    std::fprintf(stderr, "homography accuracy  1px    3px    5px\n");
    std::fprintf(stderr, "  this run          %.2f   %.2f   %.2f\n", acc["1px"].get<double>(), acc["3px"].get<double>(),
                 acc["5px"].get<double>());
    std::fprintf(stderr, "  reference         0.49   0.78   0.88\n");
  }
  write_output(rc, emit_report(report, rc));
  return kExitOk;
}

int cmd_eval_pose(const std::string& list, const RunConfig& rc, bool ransac, bool essential, double precision_thr,
                  std::uint64_t ransac_seed) {
  const FeatureExtractor extract = make_extractor(rc.backend);
  const std::vector<PosePair> pairs = load_pose_pairs(list);
  if (pairs.empty()) throw Error(ErrorCode::MalformedRecord, "pair list " + list + " has no records");

  MetricReport report;
  report.kind = "pose";
  report.pairs = run_pairs(pairs.size(), rc.threads, [&](std::size_t i) {
    const PosePair& p = pairs[i];
    PairRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "pair-%05zu", i + 1);
    rec.id = id;
    auto fail = [&](const std::string& why) {
      rec.failed = true;
      rec.note = why;
      rec.metrics = {{"pose_error_deg", std::numeric_limits<double>::infinity()}, {"precision", 0.0}};
      return rec;
    };
    try {
      const Image a = load_image(p.image_a);
      const Image b = load_image(p.image_b);
      CascadeConfig cfg = rc.cascade(1);
      if (essential) cfg.intrinsics = StereoIntrinsics{p.gt.ka, p.gt.kb};
      const CascadeResult r = cascade_match(extract(a), extract(b), cfg);
      std::vector<Correspondence> corr = r.correspondences();
      FundamentalMatrix f = r.fundamental;
      if (ransac) {
        RansacOptions ro;
        ro.seed = ransac_seed + i;
        const RansacResult rr = ransac_fundamental(corr, ro);
        if (rr.inliers.size() >= 8) {
          corr = rr.inliers;
          f = estimate_fundamental(corr).fundamental;
        }
      }
      rec.match_count = corr.size();
      if (corr.empty()) return fail("no matches");
      const auto pose = relative_pose_from_fundamental(f, corr, p.gt.ka, p.gt.kb);
      const double err = pose ? pose_angular_error(*pose, p.gt.pose) : std::numeric_limits<double>::infinity();
      const double prec = matching_precision(corr, p.gt, precision_thr).values[0];
      rec.metrics = {{"pose_error_deg", err}, {"precision", prec}};
      if (!pose) rec.note = "pose decomposition failed";
      rec.failed = !pose;
      return rec;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::IoError || e.code() == ErrorCode::ModelLoadError) throw;
      return fail(e.what());
    }
  });
  report.sort_pairs();
  report.aggregates = pose_aggregates(report.pairs);
  if (pairs.size() >= kMegaDepthPairs) {
    report.reference = nlohmann::ordered_json{{"source", "reference MegaDepth-1500 results (VGG19 backbone)"},
                                              {"pose_auc", {{"5deg", 39.85}, {"10deg", 54.11}, {"20deg", 65.86}}},
                                              {"precision", 91.14}};
    const auto& auc = report.aggregates["pose_auc"];
    std::fprintf(stderr, "pose AUC (%%)   @5     @10    @20    P\n");
    std::fprintf(stderr, "  this run    %5.2f  %5.2f  %5.2f  %5.2f\n", 100 * auc["5deg"].get<double>(),
                 100 * auc["10deg"].get<double>(), 100 * auc["20deg"].get<double>(),
                 100 * report.aggregates["precision"].get<double>());
    std::fprintf(stderr, "  reference   39.85  54.11  65.86  91.14\n");
  }
  write_output(rc, emit_report(report, rc));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Training-free cascade correspondence matching"};
  app.require_subcommand(1);

  RunConfig rc;

  std::string image_a, image_b;
  auto* match = app.add_subcommand("match", "Match an image pair and write JSON-lines matches");
  match->add_option("imageA", image_a, "First image")->required();
  match->add_option("imageB", image_b, "Second image")->required();
  add_common(match, rc);

  std::string hp_root;
  auto* hpatches = app.add_subcommand("eval-hpatches", "MMA and homography accuracy over HPatches sequences");
  hpatches->add_option("root", hp_root, "Directory of sequence folders")->required();
  add_common(hpatches, rc);

  std::string pair_list;
  bool ransac = false, essential = false;
  double precision_thr = kEpipolarPrecisionThreshold;
  std::uint64_t ransac_seed = 0;
  auto* pose = app.add_subcommand("eval-pose", "Relative pose AUC and matching precision over a pair list");
  pose->add_option("pairs", pair_list, "JSON-lines pair list")->required();
  add_common(pose, rc);
  pose->add_flag("--ransac", ransac, "Robust re-estimation of F on the final matches before pose recovery");
  pose->add_option("--ransac-seed", ransac_seed, "Seed for --ransac")->capture_default_str();
  pose->add_flag("--essential", essential, "Estimate E on calibrated points inside the cascade");
  pose->add_option("--precision-threshold", precision_thr, "Symmetric epipolar threshold, normalized coordinates")
      ->capture_default_str();

  std::uint64_t seed = 1;
  std::string fault;
  unsigned st_threads = 0;
  auto* selftest = app.add_subcommand("selftest", "Run the synthetic oracle suite");
  selftest->add_option("--seed", seed, "Random seed")->capture_default_str();
  selftest->add_option("--threads", st_threads, "Worker threads (0 = all cores)")->capture_default_str();
  selftest->add_option("--inject-fault", fault, "Test hook")->check(CLI::IsMember({"sampson-sign"}));

  int template_layers = 5;
  std::string template_out;
  auto* tmpl = app.add_subcommand("export-manifest-template", "Print a backend manifest to fill in");
  tmpl->add_option("--layers", template_layers, "Number of taps")->capture_default_str();
  tmpl->add_option("--out", template_out, "Output file (default: standard output)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*match) return cmd_match(image_a, image_b, rc);
    if (*hpatches) return cmd_eval_hpatches(hp_root, rc);
    if (*pose) return cmd_eval_pose(pair_list, rc, ransac, essential, precision_thr, ransac_seed);
    if (*selftest) {
      SelftestOptions o;
      o.seed = seed;
      o.threads = st_threads;
      o.flip_sampson_sign = fault == "sampson-sign";
      const SelftestReport r = run_selftest(o);
      std::cout << r.transcript();
      return r.ok() ? kExitOk : kExitError;
    }
    if (*tmpl) {
      if (template_layers < 2) throw Error(ErrorCode::InvalidArgument, "a manifest needs at least two layers");
      BackendManifest m;
      m.backend = "onnx";
      m.model = "model.onnx";
      m.preprocess.mean = {0.485, 0.456, 0.406};
      m.preprocess.std = {0.229, 0.224, 0.225};
      m.preprocess.multiple_of = 1 << (template_layers - 1);
      for (int l = 0; l < template_layers; ++l) m.layers.push_back({"tap" + std::to_string(l), double(1 << l), 64, false});
      RunConfig out;
      out.out = template_out;
      write_output(out, m.to_json().dump(2) + "\n");
      return kExitOk;
    }
  } catch (const CascadeError& e) {
    std::cerr << "e3cm: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const Error& e) {
    std::cerr << "e3cm: " << to_string(e.code()) << ": " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "e3cm: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
