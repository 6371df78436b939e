#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

#include "e3cm/datasets.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace e3cm;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() / ("e3cm_ds_" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// Images are never decoded by the loader, so empty files are enough.
void make_sequence(const fs::path& dir, int images = 6) {
  fs::create_directories(dir);
  for (int k = 1; k <= images; ++k) write_text(dir / (std::to_string(k) + ".ppm"), "");
  for (int k = 2; k <= 6; ++k) {
    Mat3 h = Mat3::Identity();
    h(0, 2) = k;
    write_matrix_file(dir / ("H_1_" + std::to_string(k)), h);
  }
}

std::string pose_line(const std::string& extra = "") {
  return R"({"imgA":"a.png","imgB":"b.png","KA":[[500,0,320],[0,500,240],[0,0,1]],)"
         R"("KB":[500,0,320,0,500,240,0,0,1],"R":[[1,0,0],[0,1,0],[0,0,1]],"t":[2,0,0])" +
         extra + "}";
}

}  // namespace

TEST(MatrixFile, RoundTripsAtFullPrecision) {
  TempDir tmp;
  std::mt19937_64 rng(401);
  const Mat3 m = oracle::random_rotation(rng, 40.0) * 3.14159;
  write_matrix_file(tmp.path() / "m", m);
  EXPECT_EQ(read_matrix_file(tmp.path() / "m"), m);
}

TEST(MatrixFile, Errors) {
  TempDir tmp;
  EXPECT_E3CM_ERROR(read_matrix_file(tmp.path() / "nope"), ErrorCode::MissingFile);
  write_text(tmp.path() / "short", "1 0 0\n0 1 0\n0 0\n");
  EXPECT_E3CM_ERROR(read_matrix_file(tmp.path() / "short"), ErrorCode::MalformedMatrix);
  write_text(tmp.path() / "text", "1 0 0\n0 1 0\n0 0 x\n");
  EXPECT_E3CM_ERROR(read_matrix_file(tmp.path() / "text"), ErrorCode::MalformedMatrix);
  write_text(tmp.path() / "long", "1 0 0 0 1 0 0 0 1 7");
  EXPECT_E3CM_ERROR(read_matrix_file(tmp.path() / "long"), ErrorCode::MalformedMatrix);
}

TEST(HPatches, LoadsFivePairs) {
  TempDir tmp;
  make_sequence(tmp.path() / "v_test");
  const HPatchesSequence seq = load_hpatches_sequence(tmp.path() / "v_test");
  EXPECT_EQ(seq.name, "v_test");
  EXPECT_TRUE(seq.viewpoint());
  EXPECT_FALSE(seq.illumination());
  ASSERT_EQ(seq.pairs.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_EQ(seq.pairs[i].target, static_cast<int>(i) + 2);
    ASSERT_TRUE(seq.pairs[i].h.has_value());
    EXPECT_NEAR(seq.pairs[i].h->project({0, 0}).x, i + 2.0, 1e-12);
  }
}

TEST(HPatches, MissingFilesAlwaysThrow) {
  TempDir tmp;
  make_sequence(tmp.path() / "i_short", 5);
  EXPECT_E3CM_ERROR(load_hpatches_sequence(tmp.path() / "i_short"), ErrorCode::MissingFile);
  EXPECT_E3CM_ERROR(load_hpatches_sequence(tmp.path() / "i_short", true), ErrorCode::MissingFile);
  make_sequence(tmp.path() / "i_noh");
  fs::remove(tmp.path() / "i_noh" / "H_1_4");
  EXPECT_E3CM_ERROR(load_hpatches_sequence(tmp.path() / "i_noh", true), ErrorCode::MissingFile);
}

TEST(HPatches, MalformedHomographyIsFatalOrWarning) {
  TempDir tmp;
  make_sequence(tmp.path() / "i_bad");
  write_text(tmp.path() / "i_bad" / "H_1_3", "1 0 0\n0 1 0\n");
  EXPECT_E3CM_ERROR(load_hpatches_sequence(tmp.path() / "i_bad"), ErrorCode::MalformedMatrix);
  const HPatchesSequence seq = load_hpatches_sequence(tmp.path() / "i_bad", true);
  ASSERT_EQ(seq.pairs.size(), 5u);
  EXPECT_FALSE(seq.pairs[1].h.has_value());
  EXPECT_NE(seq.pairs[1].warning.find("H_1_3"), std::string::npos);
  EXPECT_TRUE(seq.pairs[2].h.has_value());

  // A singular matrix is malformed too.
  write_text(tmp.path() / "i_bad" / "H_1_3", "0 0 0\n0 0 0\n0 0 0\n");
  EXPECT_E3CM_ERROR(load_hpatches_sequence(tmp.path() / "i_bad"), ErrorCode::MalformedMatrix);
}

TEST(HPatches, ListsSequencesSorted) {
  TempDir tmp;
  make_sequence(tmp.path() / "v_b");
  make_sequence(tmp.path() / "i_a");
  write_text(tmp.path() / "README", "x");
  const auto dirs = list_sequences(tmp.path());
  ASSERT_EQ(dirs.size(), 2u);
  EXPECT_EQ(dirs[0].filename(), "i_a");
  EXPECT_EQ(dirs[1].filename(), "v_b");
}

TEST(PosePairs, ParsesNestedAndFlatMatrices) {
  TempDir tmp;
  write_text(tmp.path() / "pairs.jsonl", pose_line() + "\n\n" + pose_line() + "\n");
  const auto pairs = load_pose_pairs(tmp.path() / "pairs.jsonl");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].image_a, tmp.path() / "a.png");
  EXPECT_EQ(pairs[0].gt.ka.fx, 500.0);
  EXPECT_EQ(pairs[0].gt.kb.cy, 240.0);
  EXPECT_EQ(pairs[0].gt.pose.rotation, Mat3::Identity());
  EXPECT_EQ(pairs[0].gt.pose.translation, Vec3::UnitX());
}

TEST(PosePairs, ReportsLineOfBadRecord) {
  TempDir tmp;
  const std::string good = pose_line();
  write_text(tmp.path() / "trunc.jsonl", good + "\n" + good.substr(0, good.size() / 2) + "\n");
  try {
    load_pose_pairs(tmp.path() / "trunc.jsonl");
    FAIL() << "expected MalformedRecord";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedRecord);
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }

  std::string not_rotation = good;
  not_rotation.replace(not_rotation.find("\"R\":[[1,0,0]"), 12, "\"R\":[[2,0,0]");
  write_text(tmp.path() / "rot.jsonl", not_rotation + "\n");
  EXPECT_E3CM_ERROR(load_pose_pairs(tmp.path() / "rot.jsonl"), ErrorCode::MalformedRecord);

  std::string no_t = good;
  no_t.replace(no_t.find("\"t\":[2,0,0]"), 11, "\"t\":[0,0,0]");
  write_text(tmp.path() / "t.jsonl", no_t + "\n");
  EXPECT_E3CM_ERROR(load_pose_pairs(tmp.path() / "t.jsonl"), ErrorCode::MalformedRecord);

  EXPECT_E3CM_ERROR(load_pose_pairs(tmp.path() / "missing.jsonl"), ErrorCode::MissingFile);
}

TEST(PosePairs, WriteThenReadRoundTrips) {
  TempDir tmp;
  std::mt19937_64 rng(402);
  std::vector<PosePair> pairs;
  for (int i = 0; i < 5; ++i) {
    PosePair p;
    p.image_a = tmp.path() / "img" / ("a" + std::to_string(i) + ".png");
    p.image_b = tmp.path() / "img" / ("b" + std::to_string(i) + ".png");
    p.gt.ka = {400.0 + i, 410.0, 320.0, 240.0, 0.0};
    p.gt.kb = {380.0, 390.0 + i, 300.0, 250.0, 0.0};
    p.gt.pose = {oracle::random_rotation(rng, 30.0), Vec3(1.0, 0.1 * i, 0.2).normalized()};
    pairs.push_back(p);
  }
  write_pose_pairs(tmp.path() / "out.jsonl", pairs);
  std::ifstream in(tmp.path() / "out.jsonl");
  std::string first;
  std::getline(in, first);
  EXPECT_NE(first.find("\"imgA\":\"img/a0.png\""), std::string::npos) << first;

  const auto back = load_pose_pairs(tmp.path() / "out.jsonl");
  ASSERT_EQ(back.size(), pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    EXPECT_EQ(back[i].image_a, pairs[i].image_a);
    EXPECT_EQ(back[i].gt.ka.fx, pairs[i].gt.ka.fx);
    EXPECT_EQ(back[i].gt.kb.fy, pairs[i].gt.kb.fy);
    EXPECT_LT((back[i].gt.pose.rotation - pairs[i].gt.pose.rotation).norm(), 1e-12);
    EXPECT_LT((back[i].gt.pose.translation - pairs[i].gt.pose.translation).norm(), 1e-12);
  }
}
