#pragma once

// Toy dyadic motion representation, canonicalization, deterministic synthetic
// dataset generation, a hashed bag-of-tokens text embedder, and the .dym
// motion file format.
//
// Coordinates are meters with y up; x and z span the ground plane. The toy
// skeleton has 5 joints: root (hip), left/right hand, left/right foot. Hands
// and feet sit at fixed distances from the root so generated data carries a
// constant-bone-length invariant.

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "duet/rng.hpp"
#include "duet/tensor.hpp"

namespace duet::motion {

class io_error : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

constexpr int kNumJoints = 5;
constexpr int kPoseDim = 3 * kNumJoints;
constexpr int kJointRoot = 0;
constexpr int kJointHandL = 1;
constexpr int kJointHandR = 2;
constexpr int kJointFootL = 3;
constexpr int kJointFootR = 4;
constexpr double kHandBone = 0.62;
constexpr double kFootBone = 0.92;

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

struct MotionSequence {
  int fps = 10;
  // frame-major, joint-major
  std::vector<Vec3> joints;

  int length() const { return static_cast<int>(joints.size()) / kNumJoints; }
  Vec3& joint(int frame, int j) { return joints[frame * kNumJoints + j]; }
  const Vec3& joint(int frame, int j) const {
    return joints[frame * kNumJoints + j];
  }
};

struct DyadicSample {
  MotionSequence a, b;
  std::vector<std::string> texts;  // up to 3 prompt strings
  std::string id;
  std::string template_name;
};

// ---- canonicalization -------------------------------------------------------

// One rigid transform (yaw rotation + horizontal translation) applied to both
// persons so person a's frame-0 root lands on the origin (x = z = 0) and its
// initial facing aligns with +x. Facing is estimated from the root's
// horizontal travel over the first half second, falling back to the hands
// midpoint direction and then to the identity rotation. Requires L >= 2.
DyadicSample canonicalize(const DyadicSample& s);

// Largest deviation of any hand/foot bone length from its nominal value.
double max_bone_length_deviation(const MotionSequence& m);

// ---- synthetic dataset ------------------------------------------------------

std::vector<std::string> default_templates();

// Deterministic corpus: same (templates, args, seed) give identical samples.
// Every sample is generated at a random world pose, then canonicalized.
std::vector<DyadicSample> generate_dataset(
    const std::vector<std::string>& templates, int n_samples, int length,
    int fps, std::uint64_t seed);

// ---- text embedding ----------------------------------------------------------

// Hashed bag-of-tokens embedding: lowercase, split on non-alphanumerics, each
// token drives a seeded Gaussian vector, mean-pooled and L2-normalized.
// Token order does not matter (a documented limitation of bag pooling).
// An empty prompt returns the zero vector, which callers treat as the null
// condition.
Tensor embed_text(const std::string& prompt, int d_text);
bool is_null_embedding(const Tensor& embedding);

// ---- pose tensor bridge -------------------------------------------------------

Tensor to_pose_tensor(const MotionSequence& m);  // [L x kPoseDim]
MotionSequence from_pose_tensor(const Tensor& x, int fps);

// ---- .dym file format ---------------------------------------------------------
// magic "DYMO", then little-endian u32 fields version=1, fps, L, J, P=2,
// followed by P*L*J*3 little-endian f32 (person-major, frame-major,
// joint-major). Prompt strings and the template name live in a plain-text
// sidecar at <path>.json.

void write_motion(const std::string& path, const DyadicSample& s);
DyadicSample read_motion(const std::string& path);

// ---- corpus on disk -----------------------------------------------------------

struct CorpusInfo {
  std::string manifest_path;
  std::string hash_hex;
  int count = 0;
};

// Writes samples/<id>.dym plus a manifest with one record per line:
// id, relative path, length, template.
CorpusInfo write_corpus(const std::string& dir,
                        const std::vector<DyadicSample>& samples);
std::vector<DyadicSample> read_corpus(const std::string& dir);
// FNV-1a over the manifest and every sample file, in manifest order.
std::string corpus_hash(const std::string& dir);

}  // namespace duet::motion
