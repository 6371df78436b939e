#include <gtest/gtest.h>

#include <json.hpp>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "e3cm/datasets.hpp"
#include "e3cm/features.hpp"
#include "e3cm/image_io.hpp"
#include "e3cm/synth.hpp"
#include "oracles.hpp"

using namespace e3cm;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    std::random_device rd;
    dir_ = fs::temp_directory_path() / ("e3cm_cli_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(dir_);
    Mat3 h;
    const double ang = 0.06, sc = 1.04;
    h << sc * std::cos(ang), -sc * std::sin(ang), 96 + 2 - 96 * (sc * std::cos(ang) - sc * std::sin(ang)),
        sc * std::sin(ang), sc * std::cos(ang), 96 - 3 - 96 * (sc * std::sin(ang) + sc * std::cos(ang)), 1e-5, 0, 1;
    const WarpedPair wp = textured_warp_pair(23, 192, 192, h, 2);
    save_image(dir_ / "a.png", wp.a);
    save_image(dir_ / "b.png", wp.b);
    h_ = h;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static RunResult run(const std::string& args) {
    static int counter = 0;
    const fs::path out = dir_ / ("out" + std::to_string(counter) + ".txt");
    const fs::path err = dir_ / ("err" + std::to_string(counter++) + ".txt");
    const std::string cmd = std::string(E3CM_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

  static std::string path(const std::string& name) { return (dir_ / name).string(); }

  static inline fs::path dir_;
  static inline Mat3 h_;
};

std::vector<nlohmann::json> json_lines(const std::string& text) {
  std::vector<nlohmann::json> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(nlohmann::json::parse(line));
  }
  return out;
}

}  // namespace

TEST_F(CliTest, MatchOutputIsConsistentWithItsHeader) {
  const RunResult r = run("match " + path("a.png") + " " + path("b.png"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto lines = json_lines(r.out);
  ASSERT_GE(lines.size(), 51u);
  const auto& head = lines[0];
  EXPECT_EQ(head["record"], "header");
  EXPECT_FALSE(head["degenerate"].get<bool>());
  EXPECT_EQ(head["match_count"].get<std::size_t>(), lines.size() - 1);
  EXPECT_EQ(head["backend"], "builtin:4");
  EXPECT_EQ(head["layers"].size(), 4u);
  const auto fv = head["F"].get<std::vector<double>>();
  ASSERT_EQ(fv.size(), 9u);
  Mat3 f;
  for (int i = 0; i < 9; ++i) f(i / 3, i % 3) = fv[i];

  std::vector<Correspondence> corr;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& m = lines[i];
    const PixelPoint a{m["xA"].get<double>(), m["yA"].get<double>()};
    const PixelPoint b{m["xB"].get<double>(), m["yB"].get<double>()};
    EXPECT_LE(oracle::sampson(f, a.x, a.y, b.x, b.y), 1.0 + 1e-9);
    EXPECT_GE(m["distance"].get<double>(), 0.0);
    corr.push_back({a, b});
  }
  EXPECT_GE(static_cast<double>(oracle::count_within(corr, h_, 3.0)) / corr.size(), 0.9);
}

TEST_F(CliTest, MatchIsByteIdenticalAcrossThreadCounts) {
  const RunResult one = run("match " + path("a.png") + " " + path("b.png") + " --threads 1");
  const RunResult four = run("match " + path("a.png") + " " + path("b.png") + " --threads 4");
  const RunResult again = run("match " + path("a.png") + " " + path("b.png") + " --threads 1");
  ASSERT_EQ(one.code, 0);
  EXPECT_EQ(one.out, four.out);
  EXPECT_EQ(one.out, again.out);
}

TEST_F(CliTest, CsvOutputAndOutFile) {
  const RunResult r =
      run("match " + path("a.png") + " " + path("b.png") + " --format csv --out " + path("m.csv"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.out.empty());
  std::istringstream in(slurp(path("m.csv")));
  std::string l1, l2, l3;
  std::getline(in, l1);
  std::getline(in, l2);
  std::getline(in, l3);
  EXPECT_EQ(l1.rfind("# F ", 0), 0u);
  EXPECT_EQ(l2, "# degenerate 0");
  EXPECT_EQ(l3, "xA,yA,xB,yB,distance,confidence");
}

TEST_F(CliTest, IdenticalImagesReportDegenerateGeometry) {
  const RunResult r = run("match " + path("a.png") + " " + path("a.png"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(json_lines(r.out)[0]["degenerate"].get<bool>());
}

TEST_F(CliTest, ErrorsMapToExitCodes) {
  const RunResult missing = run("match " + path("nope.png") + " " + path("b.png"));
  EXPECT_EQ(missing.code, 1);
  EXPECT_NE(missing.err.find("IoError"), std::string::npos) << missing.err;

  Image flat(128, 128);
  std::fill(flat.data.begin(), flat.data.end(), 0.4f);
  save_image(dir_ / "flat.png", flat);
  const RunResult seedless = run("match " + path("flat.png") + " " + path("flat.png"));
  EXPECT_EQ(seedless.code, 2) << seedless.err;

  EXPECT_EQ(run("match " + path("a.png") + " " + path("b.png") + " --ratio 0.9,0.9").code, 1);
  EXPECT_EQ(run("match " + path("a.png") + " " + path("b.png") + " --backend builtin:zero").code, 1);
  EXPECT_EQ(run("frobnicate").code, 1);
}

TEST_F(CliTest, EvalHPatchesOnSyntheticSequences) {
  const fs::path root = dir_ / "hp";
  for (const std::string name : {"v_synth", "i_broken"}) {
    const fs::path seq = root / name;
    fs::create_directories(seq);
    const WarpedPair ref = textured_warp_pair(31, 128, 128, Mat3::Identity(), 2);
    save_image(seq / "1.png", ref.a);
    for (int k = 2; k <= 6; ++k) {
      Mat3 h = Mat3::Identity();
      h(0, 2) = 1.5 * k;
      h(1, 2) = -k;
      save_image(seq / (std::to_string(k) + ".png"), textured_warp_pair(31, 128, 128, h, 2).b);
      write_matrix_file(seq / ("H_1_" + std::to_string(k)), h);
    }
  }
  {
    std::ofstream bad(root / "i_broken" / "H_1_4");
    bad << "1 0 0\n0 1\n";
  }
  const RunResult r = run("eval-hpatches " + root.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["kind"], "hpatches");
  EXPECT_EQ(j["pair_count"].get<int>(), 9);
  ASSERT_EQ(j["warnings"].size(), 1u);
  EXPECT_NE(j["warnings"][0].get<std::string>().find("i_broken/1-4"), std::string::npos);
  EXPECT_EQ(j["aggregates"]["viewpoint"]["pairs"].get<int>(), 5);
  EXPECT_EQ(j["aggregates"]["illumination"]["pairs"].get<int>(), 4);
  EXPECT_GE(j["aggregates"]["viewpoint"]["mma"][2].get<double>(), 0.9);
  EXPECT_FALSE(j.contains("reference"));

  const RunResult csv = run("eval-hpatches " + root.string() + " --format csv");
  ASSERT_EQ(csv.code, 0);
  EXPECT_EQ(std::count(csv.out.begin(), csv.out.end(), '\n'), 10);
}

TEST_F(CliTest, EvalPoseOnRenderedScenes) {
  std::vector<PosePair> pairs;
  CameraSpec spec;
  spec.min_rotation_deg = 8.0;
  spec.max_rotation_deg = 12.0;
  for (int i = 0; i < 2; ++i) {
    const SyntheticScene s = synth_scene(40 + i, 150, spec);
    const RenderedPair rp = render_scene(s);
    const fs::path a = dir_ / ("pa" + std::to_string(i) + ".png"), b = dir_ / ("pb" + std::to_string(i) + ".png");
    save_image(a, rp.a);
    save_image(b, rp.b);
    pairs.push_back({a, b, {s.camera.ka, s.camera.kb, s.pose}});
  }
  write_pose_pairs(dir_ / "pairs.jsonl", pairs);
  const RunResult r = run("eval-pose " + path("pairs.jsonl"));
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["kind"], "pose");
  ASSERT_EQ(j["pairs"].size(), 2u);
  EXPECT_EQ(j["pairs"][0]["id"], "pair-00001");
  for (const auto& p : j["pairs"]) {
    EXPECT_FALSE(p["failed"].get<bool>());
    EXPECT_LT(p["metrics"]["pose_error_deg"].get<double>(), 20.0);
  }
  const auto& auc = j["aggregates"]["pose_auc"];
  EXPECT_LE(auc["5deg"].get<double>(), auc["10deg"].get<double>());
  EXPECT_LE(auc["10deg"].get<double>(), auc["20deg"].get<double>());
  EXPECT_GT(auc["20deg"].get<double>(), 0.0);

  const RunResult rs = run("eval-pose " + path("pairs.jsonl") + " --ransac --ransac-seed 3");
  EXPECT_EQ(rs.code, 0) << rs.err;

  {
    std::ofstream empty(dir_ / "empty.jsonl");
  }
  EXPECT_EQ(run("eval-pose " + path("empty.jsonl")).code, 1);
}

TEST_F(CliTest, SelftestIsDeterministicAndDetectsFaults) {
  const RunResult a = run("selftest --seed 3");
  const RunResult b = run("selftest --seed 3 --threads 4");
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_NE(a.out.find("summary 9/9 passed"), std::string::npos) << a.out;

  const RunResult bad = run("selftest --seed 3 --inject-fault sampson-sign");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("FAIL geometry.sampson_hand_case"), std::string::npos) << bad.out;
}

TEST_F(CliTest, ManifestTemplateLoads) {
  const RunResult r = run("export-manifest-template --layers 3");
  ASSERT_EQ(r.code, 0);
  const BackendManifest m = BackendManifest::from_json(nlohmann::json::parse(r.out));
  EXPECT_EQ(m.layers.size(), 3u);
  EXPECT_EQ(m.layers[2].scale, 4.0);
  EXPECT_EQ(run("export-manifest-template --layers 1").code, 1);
}
