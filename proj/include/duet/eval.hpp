#pragma once

// Metric suite: per-frame NDMS curves for long-horizon quality, FID /
// Diversity / MModality over a deterministic feature extractor, the
// R-Precision retrieval protocol, and report generation. Every metric is a
// pure function of (inputs, seed); re-running a report is bit-stable.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "duet/denoiser.hpp"
#include "duet/diffusion.hpp"
#include "duet/motion.hpp"
#include "duet/rng.hpp"

namespace duet::eval {

// ---- feature extractor --------------------------------------------------------

// Windowed motion statistics pushed through a fixed seeded random projection
// with tanh. Never trained: absolute feature-space numbers are only meaningful
// under the same seed.
class FeatureExtractor {
 public:
  static constexpr std::uint64_t kDefaultSeed = 0x0defea7u;

  FeatureExtractor(int d_feat, int d_text, std::uint64_t seed = kDefaultSeed);

  int d_feat() const { return d_feat_; }
  std::vector<double> motion_features(const motion::DyadicSample& s) const;
  std::vector<double> text_features(const std::string& prompt) const;

  // Raw windowed statistics; exposed for tests.
  static std::vector<double> raw_stats(const motion::DyadicSample& s);
  static int raw_dim();

 private:
  int d_feat_;
  int d_text_;
  std::vector<double> w_motion_;  // [d_feat x raw_dim]
  std::vector<double> b_motion_;  // [d_feat]
  std::vector<double> w_text_;    // [d_feat x d_text]
};

// ---- NDMS ----------------------------------------------------------------------

struct NdmsConfig {
  int window = 3;              // frames; >= 2
  int max_ref_windows = 512;   // best-of-subsample cap

  static NdmsConfig for_fps(int fps) {
    NdmsConfig c;
    c.window = std::max(2, static_cast<int>(std::llround(fps / 3.0)));
    return c;
  }
};

// Per-joint displacement over one window.
using WindowVecs = std::array<motion::Vec3, motion::kNumJoints>;

// Directional similarity x magnitude ratio, averaged over joints, in [0,1].
// Both vectors (near-)static counts as a perfect match; exactly one static
// scores zero for that joint.
double ndms_frame(const WindowVecs& gen, const WindowVecs& ref);

// All reference windows of a corpus (both persons, every position).
struct RefWindowPool {
  int window = 0;
  std::vector<WindowVecs> windows;
};

RefWindowPool build_ref_pool(const std::vector<motion::DyadicSample>& corpus,
                             int window);

// Score of the best-matching reference window (over a seeded subsample of at
// most cfg.max_ref_windows; exhaustive when the pool is small enough) for
// each window position. Curve length = L - window + 1.
std::vector<double> ndms_curve(const motion::MotionSequence& gen,
                               const RefWindowPool& pool,
                               const NdmsConfig& cfg, Rng& rng);

// Per-person curves averaged.
std::vector<double> ndms_curve_dyadic(const motion::DyadicSample& gen,
                                      const RefWindowPool& pool,
                                      const NdmsConfig& cfg, Rng& rng);

// ---- distribution metrics --------------------------------------------------------

// Frechet distance between Gaussian fits: |mu1-mu2|^2 + Tr(S1 + S2 -
// 2*sqrt(S1^1/2 S2 S1^1/2)). Covariances get a small ridge when sample counts
// are at or below the feature dimension. Needs >= 2 samples per side.
double fid(const std::vector<std::vector<double>>& real_feats,
           const std::vector<std::vector<double>>& gen_feats);

// Mean pairwise L2 over n_pairs seeded random pairs; enumerates every distinct
// pair exactly when n_pairs covers them all.
double diversity(const std::vector<std::vector<double>>& feats, int n_pairs,
                 Rng& rng);

// k generations per prompt, random disjoint pairing, mean pair distance,
// averaged over prompts.
double mmodality(const std::vector<std::vector<std::vector<double>>>& per_prompt,
                 int k, Rng& rng);

struct RPrecision {
  double top1 = 0.0, top2 = 0.0, top3 = 0.0;
};

// Motion-to-text retrieval: each motion ranks its true text among pool-1
// seeded distractors by Euclidean distance.
RPrecision r_precision(const std::vector<std::vector<double>>& text_feats,
                       const std::vector<std::vector<double>>& motion_feats,
                       int pool, Rng& rng);

// ---- long-horizon benchmark --------------------------------------------------------

struct BenchmarkConfig {
  std::vector<int> horizons;  // frame counts, shortest first
  int n_generations = 8;      // per horizon
  int ddim_steps = 20;
  double guidance_w = 2.0;
  std::uint64_t seed = 0;
  int mmodality_prompts = 3;
  int mmodality_k = 4;
  int diversity_pairs = 0;  // 0: scaled to the generation count
  NdmsConfig ndms;
};

struct HorizonResult {
  int length = 0;
  std::vector<double> curve;  // mean over generations, per window position
  double mean = 0.0;
  double stddev = 0.0;  // across generations' means
};

struct EvalReport {
  std::vector<HorizonResult> horizons;
  double flatness = 0.0;  // mean(longest horizon) / mean(shortest)
  double fid_value = 0.0;
  double diversity_value = 0.0;
  double mmodality_value = 0.0;
  RPrecision retrieval;
  std::vector<std::pair<std::string, std::string>> config_echo;

  std::string to_text() const;
  std::string curves_csv() const;
};

EvalReport longterm_benchmark(const denoiser::DenoiserParams& params,
                              const diffusion::NoiseSchedule& schedule,
                              const std::vector<motion::DyadicSample>& corpus,
                              const FeatureExtractor& fx,
                              const BenchmarkConfig& cfg);

}  // namespace duet::eval
