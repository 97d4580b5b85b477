#include <cmath>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "duet/motion.hpp"

using namespace duet;
using namespace duet::motion;

namespace {

std::filesystem::path temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() /
           (std::string("duet_test_") + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// All pairwise joint distances inside and across persons.
std::vector<double> pairwise_distances(const DyadicSample& s) {
  std::vector<double> d;
  int L = s.a.length();
  for (int f = 0; f < L; ++f) {
    std::vector<Vec3> pts;
    for (int j = 0; j < kNumJoints; ++j) pts.push_back(s.a.joint(f, j));
    for (int j = 0; j < kNumJoints; ++j) pts.push_back(s.b.joint(f, j));
    for (std::size_t i = 0; i < pts.size(); ++i)
      for (std::size_t k = i + 1; k < pts.size(); ++k)
        d.push_back((pts[i] - pts[k]).norm());
  }
  return d;
}

DyadicSample rigid_transform(const DyadicSample& s, double yaw, double tx,
                             double tz) {
  DyadicSample out = s;
  double c = std::cos(yaw), sn = std::sin(yaw);
  for (MotionSequence* m : {&out.a, &out.b}) {
    for (Vec3& p : m->joints) {
      Vec3 r{p.x * c - p.z * sn, p.y, p.x * sn + p.z * c};
      p = {r.x + tx, r.y, r.z + tz};
    }
  }
  return out;
}

}  // namespace

TEST_CASE("generated dataset is deterministic and well-formed") {
  auto one = generate_dataset(default_templates(), 8, 40, 10, 99);
  auto two = generate_dataset(default_templates(), 8, 40, 10, 99);
  REQUIRE(one.size() == 8);
  for (std::size_t i = 0; i < one.size(); ++i) {
    CHECK(one[i].a.joints.size() == two[i].a.joints.size());
    for (std::size_t k = 0; k < one[i].a.joints.size(); ++k) {
      CHECK(one[i].a.joints[k].x == two[i].a.joints[k].x);
      CHECK(one[i].b.joints[k].z == two[i].b.joints[k].z);
    }
    CHECK(one[i].texts.size() == 3);
    CHECK(one[i].a.length() == 40);
  }
  CHECK(generate_dataset(default_templates(), 0, 40, 10, 1).empty());
}

TEST_CASE("desk-sized corpus generates inside the timing budget") {
  auto t0 = std::chrono::steady_clock::now();
  auto samples = generate_dataset(default_templates(), 200, 40, 10, 1234);
  double secs = std::chrono::duration<double>(
                    std::chrono::steady_clock::now() - t0)
                    .count();
  CHECK(samples.size() == 200);
  CHECK(secs < 10.0);
}

TEST_CASE("generated samples hold the bone-length invariant") {
  auto samples = generate_dataset(default_templates(), 12, 40, 10, 7);
  for (const auto& s : samples) {
    CHECK(max_bone_length_deviation(s.a) < 1e-6);
    CHECK(max_bone_length_deviation(s.b) < 1e-6);
  }
}

TEST_CASE("canonicalize is idempotent and pins person a") {
  auto samples = generate_dataset(default_templates(), 8, 40, 10, 31);
  for (const auto& s : samples) {
    // generate_dataset already canonicalizes
    CHECK(std::abs(s.a.joint(0, kJointRoot).x) < 1e-9);
    CHECK(std::abs(s.a.joint(0, kJointRoot).z) < 1e-9);

    DyadicSample again = canonicalize(s);
    for (std::size_t k = 0; k < s.a.joints.size(); ++k) {
      CHECK(std::abs(again.a.joints[k].x - s.a.joints[k].x) < 1e-12);
      CHECK(std::abs(again.a.joints[k].y - s.a.joints[k].y) < 1e-12);
      CHECK(std::abs(again.a.joints[k].z - s.a.joints[k].z) < 1e-12);
      CHECK(std::abs(again.b.joints[k].x - s.b.joints[k].x) < 1e-12);
    }
  }
}

TEST_CASE("canonicalize preserves all pairwise distances") {
  auto samples = generate_dataset(default_templates(), 4, 40, 10, 77);
  for (const auto& s : samples) {
    DyadicSample placed = rigid_transform(s, 1.1, 4.0, -2.5);
    DyadicSample canon = canonicalize(placed);
    auto before = pairwise_distances(placed);
    auto after = pairwise_distances(canon);
    for (std::size_t i = 0; i < before.size(); ++i)
      CHECK(std::abs(before[i] - after[i]) < 1e-9);
  }
}

TEST_CASE("samples differing by a rigid transform canonicalize identically") {
  auto samples = generate_dataset(default_templates(), 4, 40, 10, 55);
  for (const auto& s : samples) {
    DyadicSample moved = rigid_transform(s, -2.3, 1.7, 0.4);
    DyadicSample canon = canonicalize(moved);
    for (std::size_t k = 0; k < s.a.joints.size(); ++k) {
      CHECK(std::abs(canon.a.joints[k].x - s.a.joints[k].x) < 1e-9);
      CHECK(std::abs(canon.a.joints[k].y - s.a.joints[k].y) < 1e-9);
      CHECK(std::abs(canon.a.joints[k].z - s.a.joints[k].z) < 1e-9);
      CHECK(std::abs(canon.b.joints[k].x - s.b.joints[k].x) < 1e-9);
      CHECK(std::abs(canon.b.joints[k].z - s.b.joints[k].z) < 1e-9);
    }
  }
}

TEST_CASE("canonicalize falls back gracefully for static symmetric poses") {
  DyadicSample s;
  s.a.fps = s.b.fps = 10;
  // Perfectly static, hands symmetric about the root: degenerate facing.
  for (int f = 0; f < 4; ++f) {
    s.a.joints.push_back({0.5, 0.9, 0.5});                  // root
    s.a.joints.push_back({0.5, 0.4, 0.5 + kHandBone});      // hand L
    s.a.joints.push_back({0.5, 0.4, 0.5 - kHandBone});      // hand R (mirror)
    s.a.joints.push_back({0.5, 0.0, 0.5 + 0.2});
    s.a.joints.push_back({0.5, 0.0, 0.5 - 0.2});
    for (int j = 0; j < kNumJoints; ++j)
      s.b.joints.push_back({2.0, 0.9, 0.0});
  }
  // hands midpoint == root horizontally -> identity rotation, translation only
  DyadicSample canon = canonicalize(s);
  CHECK(canon.a.joint(0, kJointRoot).x == 0.0);
  CHECK(canon.a.joint(0, kJointRoot).z == 0.0);
  CHECK(std::abs(canon.a.joint(1, kJointHandL).z - kHandBone) < 1e-12);
}

TEST_CASE("text embedding is deterministic, pooled, and normalized") {
  Tensor e1 = embed_text("Two people shake hands", 64);
  Tensor e2 = embed_text("Two people shake hands", 64);
  CHECK(e1.data() == e2.data());

  // bag pooling: token order cannot matter (documented limitation)
  Tensor fwd = embed_text("a pushes b", 64);
  Tensor rev = embed_text("b pushes a", 64);
  CHECK(fwd.data() == rev.data());

  double norm = 0.0;
  for (double v : e1.data()) norm += v * v;
  CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor null = embed_text("", 64);
  CHECK(is_null_embedding(null));
  CHECK(is_null_embedding(embed_text("  ... ", 64)));
  CHECK_FALSE(is_null_embedding(e1));
}

TEST_CASE("disjoint-vocabulary prompts stay nearly orthogonal") {
  Rng rng(404);
  const char* words_a[] = {"alpha", "brisk", "cedar", "dusk", "ember"};
  const char* words_b[] = {"flint", "grove", "harbor", "indigo", "jolt"};
  for (int trial = 0; trial < 20; ++trial) {
    std::string pa, pb;
    for (int w = 0; w < 3; ++w) {
      pa += std::string(words_a[rng.uniform_int(5)]) + std::to_string(trial) + " ";
      pb += std::string(words_b[rng.uniform_int(5)]) + std::to_string(trial + 100) + " ";
    }
    Tensor ea = embed_text(pa, 256);
    Tensor eb = embed_text(pb, 256);
    double dot = 0.0;
    for (int i = 0; i < 256; ++i) dot += ea.at(i) * eb.at(i);
    CHECK(std::abs(dot) < 0.2);
  }
}

TEST_CASE("pose tensor bridge round-trips") {
  auto samples = generate_dataset(default_templates(), 1, 16, 10, 3);
  Tensor x = to_pose_tensor(samples[0].a);
  CHECK(x.rows() == 16);
  CHECK(x.cols() == kPoseDim);
  MotionSequence back = from_pose_tensor(x, 10);
  for (std::size_t k = 0; k < back.joints.size(); ++k) {
    CHECK(back.joints[k].x == samples[0].a.joints[k].x);
    CHECK(back.joints[k].y == samples[0].a.joints[k].y);
  }
}

TEST_CASE("motion file round-trip is bit-exact after quantization") {
  auto dir = temp_dir("roundtrip");
  auto samples = generate_dataset(default_templates(), 1, 12, 10, 5);
  std::string p1 = (dir / "a.dym").string();
  std::string p2 = (dir / "b.dym").string();
  write_motion(p1, samples[0]);
  DyadicSample r1 = read_motion(p1);
  CHECK(r1.id == samples[0].id);
  CHECK(r1.texts == samples[0].texts);
  CHECK(r1.template_name == samples[0].template_name);
  CHECK(r1.a.fps == 10);

  // payload is f32; a second write of the read-back sample must be identical
  write_motion(p2, r1);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);
  DyadicSample r2 = read_motion(p2);
  for (std::size_t k = 0; k < r1.a.joints.size(); ++k) {
    CHECK(r1.a.joints[k].x == r2.a.joints[k].x);
    CHECK(r1.b.joints[k].z == r2.b.joints[k].z);
  }
}

TEST_CASE("minimal motion file size arithmetic") {
  auto dir = temp_dir("minimal");
  DyadicSample s;
  s.id = "tiny";
  s.a.fps = s.b.fps = 10;
  // single frame; the format stores all 5 joints of the toy skeleton
  for (int j = 0; j < kNumJoints; ++j) {
    s.a.joints.push_back({0.1 * j, 0.2, 0.3});
    s.b.joints.push_back({1.0, 2.0, 3.0 + j});
  }
  std::string path = (dir / "tiny.dym").string();
  write_motion(path, s);
  // header: 4 magic + 5 * u32 = 24 bytes; payload: 2*1*5*3 f32 = 120 bytes
  CHECK(std::filesystem::file_size(path) == 24 + 2 * 1 * kNumJoints * 3 * 4);
}

TEST_CASE("corrupt motion files are rejected with explicit errors") {
  auto dir = temp_dir("corrupt");
  auto samples = generate_dataset(default_templates(), 1, 8, 10, 9);
  std::string path = (dir / "x.dym").string();
  write_motion(path, samples[0]);

  std::string bytes;
  {
    std::ifstream f(path, std::ios::binary);
    bytes.assign((std::istreambuf_iterator<char>(f)), {});
  }
  // truncated payload
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 10));
  }
  CHECK_THROWS_AS(read_motion(path), io_error);
  // bad magic
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(read_motion(path), io_error);
  // wrong version
  {
    std::string bad = bytes;
    bad[4] = 9;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(bad.data(), static_cast<std::streamsize>(bad.size()));
  }
  CHECK_THROWS_AS(read_motion(path), io_error);
  CHECK_THROWS_AS(read_motion((dir / "missing.dym").string()), io_error);
}

TEST_CASE("corpus write/read round-trip with stable hash") {
  auto dir = temp_dir("corpus");
  auto samples = generate_dataset(default_templates(), 6, 20, 10, 21);
  CorpusInfo info = write_corpus(dir.string(), samples);
  CHECK(info.count == 6);
  CHECK(info.hash_hex.size() == 16);
  CHECK(corpus_hash(dir.string()) == info.hash_hex);

  auto loaded = read_corpus(dir.string());
  REQUIRE(loaded.size() == 6);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].id == samples[i].id);
    CHECK(loaded[i].a.length() == 20);
    CHECK(loaded[i].texts.size() == 3);
  }

  // regeneration with the same seed produces the same bytes
  auto dir2 = temp_dir("corpus2");
  CorpusInfo info2 = write_corpus(
      dir2.string(), generate_dataset(default_templates(), 6, 20, 10, 21));
  CHECK(info2.hash_hex == info.hash_hex);

  auto dir3 = temp_dir("corpus3");
  CorpusInfo info3 = write_corpus(
      dir3.string(), generate_dataset(default_templates(), 6, 20, 10, 22));
  CHECK(info3.hash_hex != info.hash_hex);
}
