#include "duet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace duet::eval {

using detail::require;
using motion::DyadicSample;
using motion::MotionSequence;
using motion::Vec3;

// ---- feature extractor --------------------------------------------------------

namespace {

// Statistics of one time slice of a dyad. Per-person blocks are averaged over
// the two persons so features are swap-invariant.
void slice_stats(const DyadicSample& s, int f0, int f1,
                 std::vector<double>& out) {
  const int joints = motion::kNumJoints;
  int frames = f1 - f0;

  auto person_block = [&](const MotionSequence& m, std::vector<double>& acc) {
    // mean and std of joint offsets from the root (joints 1..4)
    std::vector<double> mean_off(3 * (joints - 1), 0.0);
    std::vector<double> sq_off(3 * (joints - 1), 0.0);
    for (int f = f0; f < f1; ++f) {
      const Vec3& root = m.joint(f, 0);
      for (int j = 1; j < joints; ++j) {
        Vec3 off = m.joint(f, j) - root;
        double c[3] = {off.x, off.y, off.z};
        for (int k = 0; k < 3; ++k) {
          mean_off[(j - 1) * 3 + k] += c[k];
          sq_off[(j - 1) * 3 + k] += c[k] * c[k];
        }
      }
    }
    for (std::size_t i = 0; i < mean_off.size(); ++i) {
      double mu = mean_off[i] / frames;
      double var = std::max(0.0, sq_off[i] / frames - mu * mu);
      acc.push_back(mu);
      acc.push_back(std::sqrt(var));
    }
    // mean per-joint speed
    for (int j = 0; j < joints; ++j) {
      double sp = 0.0;
      for (int f = f0 + 1; f < f1; ++f)
        sp += (m.joint(f, j) - m.joint(f - 1, j)).norm();
      acc.push_back(frames > 1 ? sp / (frames - 1) : 0.0);
    }
    // mean root velocity components and root height spread
    Vec3 vel{0, 0, 0};
    double hmean = 0.0, hsq = 0.0;
    for (int f = f0 + 1; f < f1; ++f) vel = vel + (m.joint(f, 0) - m.joint(f - 1, 0));
    for (int f = f0; f < f1; ++f) {
      hmean += m.joint(f, 0).y;
      hsq += m.joint(f, 0).y * m.joint(f, 0).y;
    }
    double inv = frames > 1 ? 1.0 / (frames - 1) : 0.0;
    acc.push_back(vel.x * inv);
    acc.push_back(vel.y * inv);
    acc.push_back(vel.z * inv);
    hmean /= frames;
    acc.push_back(std::sqrt(std::max(0.0, hsq / frames - hmean * hmean)));
  };

  std::vector<double> pa, pb;
  person_block(s.a, pa);
  person_block(s.b, pb);
  for (std::size_t i = 0; i < pa.size(); ++i)
    out.push_back(0.5 * (pa[i] + pb[i]));

  // interaction statistics
  double dmean = 0.0, dsq = 0.0, dmin = 1e30, dmax = 0.0, hands = 0.0;
  for (int f = f0; f < f1; ++f) {
    double d = (s.a.joint(f, 0) - s.b.joint(f, 0)).norm();
    dmean += d;
    dsq += d * d;
    dmin = std::min(dmin, d);
    dmax = std::max(dmax, d);
    double hh = 1e30;
    for (int ja : {motion::kJointHandL, motion::kJointHandR})
      for (int jb : {motion::kJointHandL, motion::kJointHandR})
        hh = std::min(hh, (s.a.joint(f, ja) - s.b.joint(f, jb)).norm());
    hands += hh;
  }
  dmean /= frames;
  out.push_back(dmean);
  out.push_back(std::sqrt(std::max(0.0, dsq / frames - dmean * dmean)));
  out.push_back(dmin);
  out.push_back(dmax);
  out.push_back(hands / frames);
}

constexpr int kSliceDim = 2 * 3 * (motion::kNumJoints - 1) +  // offset mean/std
                          motion::kNumJoints +                // joint speeds
                          3 + 1 +                             // root vel, height
                          5;                                  // interaction
constexpr int kSlices = 4;

}  // namespace

int FeatureExtractor::raw_dim() { return 2 * kSliceDim; }

std::vector<double> FeatureExtractor::raw_stats(const DyadicSample& s) {
  int L = s.a.length();
  require(L >= 1, "feature extractor: empty sequence");
  int slices = std::min(kSlices, L);
  std::vector<std::vector<double>> per_slice;
  for (int w = 0; w < slices; ++w) {
    int f0 = static_cast<int>(static_cast<long long>(w) * L / slices);
    int f1 = static_cast<int>(static_cast<long long>(w + 1) * L / slices);
    std::vector<double> v;
    slice_stats(s, f0, std::max(f1, f0 + 1), v);
    per_slice.push_back(std::move(v));
  }
  // mean and std across slices: length-invariant features
  std::vector<double> out;
  out.reserve(raw_dim());
  for (int i = 0; i < kSliceDim; ++i) {
    double mu = 0.0, sq = 0.0;
    for (const auto& v : per_slice) {
      mu += v[i];
      sq += v[i] * v[i];
    }
    mu /= per_slice.size();
    out.push_back(mu);
    out.push_back(std::sqrt(std::max(0.0, sq / per_slice.size() - mu * mu)));
  }
  return out;
}

FeatureExtractor::FeatureExtractor(int d_feat, int d_text, std::uint64_t seed)
    : d_feat_(d_feat), d_text_(d_text) {
  require(d_feat >= 1 && d_text >= 1, "feature extractor: bad dims");
  Rng rng = Rng::substream(seed, "feature_extractor");
  int dr = raw_dim();
  w_motion_.resize(static_cast<std::size_t>(d_feat) * dr);
  for (auto& v : w_motion_) v = rng.gaussian() / std::sqrt(dr);
  b_motion_.resize(d_feat);
  for (auto& v : b_motion_) v = 0.1 * rng.gaussian();
  w_text_.resize(static_cast<std::size_t>(d_feat) * d_text);
  for (auto& v : w_text_) v = rng.gaussian() / std::sqrt(d_text);
}

std::vector<double> FeatureExtractor::motion_features(
    const DyadicSample& s) const {
  std::vector<double> raw = raw_stats(s);
  std::vector<double> out(d_feat_);
  for (int i = 0; i < d_feat_; ++i) {
    double acc = b_motion_[i];
    const double* row = w_motion_.data() + static_cast<std::size_t>(i) * raw.size();
    for (std::size_t j = 0; j < raw.size(); ++j) acc += row[j] * raw[j];
    out[i] = std::tanh(acc);
  }
  return out;
}

std::vector<double> FeatureExtractor::text_features(
    const std::string& prompt) const {
  Tensor emb = motion::embed_text(prompt, d_text_);
  std::vector<double> out(d_feat_);
  for (int i = 0; i < d_feat_; ++i) {
    double acc = 0.0;
    const double* row = w_text_.data() + static_cast<std::size_t>(i) * d_text_;
    for (int j = 0; j < d_text_; ++j) acc += row[j] * emb.at(j);
    out[i] = std::tanh(acc);
  }
  return out;
}

// ---- NDMS ----------------------------------------------------------------------

double ndms_frame(const WindowVecs& gen, const WindowVecs& ref) {
  constexpr double kEps = 1e-8;
  double score = 0.0;
  for (int j = 0; j < motion::kNumJoints; ++j) {
    if (gen[j].x == ref[j].x && gen[j].y == ref[j].y && gen[j].z == ref[j].z) {
      score += 1.0;  // identical motion vectors, including the both-static case
      continue;
    }
    double gn = gen[j].norm();
    double rn = ref[j].norm();
    double dir, mag;
    if (gn < kEps && rn < kEps) {
      dir = 1.0;  // both static: perfect agreement
      mag = 1.0;
    } else if (gn < kEps || rn < kEps) {
      dir = 0.0;
      mag = std::min(gn, rn) / std::max({gn, rn, kEps});
    } else {
      // clamp: rounding may push the cosine of near-parallel vectors past 1
      dir = std::clamp(gen[j].dot(ref[j]) / (gn * rn), 0.0, 1.0);
      mag = std::min(gn, rn) / std::max({gn, rn, kEps});
    }
    score += dir * mag;
  }
  return score / motion::kNumJoints;
}

namespace {

WindowVecs window_vectors(const MotionSequence& m, int start, int window) {
  WindowVecs w;
  for (int j = 0; j < motion::kNumJoints; ++j)
    w[j] = m.joint(start + window - 1, j) - m.joint(start, j);
  return w;
}

}  // namespace

RefWindowPool build_ref_pool(const std::vector<DyadicSample>& corpus,
                             int window) {
  require(window >= 2, "ndms: window must be >= 2 frames");
  require(!corpus.empty(), "ndms: reference corpus is empty");
  RefWindowPool pool;
  pool.window = window;
  for (const DyadicSample& s : corpus) {
    for (const MotionSequence* m : {&s.a, &s.b}) {
      for (int i = 0; i + window <= m->length(); ++i)
        pool.windows.push_back(window_vectors(*m, i, window));
    }
  }
  require(!pool.windows.empty(), "ndms: no reference windows at this length");
  return pool;
}

std::vector<double> ndms_curve(const MotionSequence& gen,
                               const RefWindowPool& pool,
                               const NdmsConfig& cfg, Rng& rng) {
  int w = cfg.window;
  require(pool.window == w, "ndms: pool window mismatch");
  require(gen.length() >= w, "ndms: sequence shorter than the window");

  // Exhaustive when the pool is small; otherwise a seeded subsample.
  std::vector<int> chosen;
  int total = static_cast<int>(pool.windows.size());
  if (total <= cfg.max_ref_windows) {
    chosen.resize(total);
    for (int i = 0; i < total; ++i) chosen[i] = i;
  } else {
    std::vector<int> idx(total);
    for (int i = 0; i < total; ++i) idx[i] = i;
    for (int i = 0; i < cfg.max_ref_windows; ++i) {
      int j = i + rng.uniform_int(total - i);
      std::swap(idx[i], idx[j]);
    }
    chosen.assign(idx.begin(), idx.begin() + cfg.max_ref_windows);
  }

  std::vector<double> curve(gen.length() - w + 1);
  for (int i = 0; i < static_cast<int>(curve.size()); ++i) {
    WindowVecs g = window_vectors(gen, i, w);
    double best = 0.0;
    for (int id : chosen) best = std::max(best, ndms_frame(g, pool.windows[id]));
    curve[i] = best;
  }
  return curve;
}

std::vector<double> ndms_curve_dyadic(const DyadicSample& gen,
                                      const RefWindowPool& pool,
                                      const NdmsConfig& cfg, Rng& rng) {
  std::vector<double> ca = ndms_curve(gen.a, pool, cfg, rng);
  std::vector<double> cb = ndms_curve(gen.b, pool, cfg, rng);
  for (std::size_t i = 0; i < ca.size(); ++i) ca[i] = 0.5 * (ca[i] + cb[i]);
  return ca;
}

// ---- FID ------------------------------------------------------------------------

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major d x d).
// a is overwritten with the diagonalized matrix; v receives eigenvectors in
// columns. Deterministic sweep order.
void jacobi_eig(std::vector<double>& a, std::vector<double>& v, int d) {
  v.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i) v[i * d + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < d; ++p)
      for (int q = p + 1; q < d; ++q) off += a[p * d + q] * a[p * d + q];
    if (off < 1e-24) break;
    for (int p = 0; p < d; ++p) {
      for (int q = p + 1; q < d; ++q) {
        double apq = a[p * d + q];
        if (std::abs(apq) < 1e-300) continue;
        double app = a[p * d + p], aqq = a[q * d + q];
        double theta = 0.5 * (aqq - app) / apq;
        double t = (theta >= 0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (int k = 0; k < d; ++k) {
          double akp = a[k * d + p], akq = a[k * d + q];
          a[k * d + p] = c * akp - s * akq;
          a[k * d + q] = s * akp + c * akq;
        }
        for (int k = 0; k < d; ++k) {
          double apk = a[p * d + k], aqk = a[q * d + k];
          a[p * d + k] = c * apk - s * aqk;
          a[q * d + k] = s * apk + c * aqk;
        }
        for (int k = 0; k < d; ++k) {
          double vkp = v[k * d + p], vkq = v[k * d + q];
          v[k * d + p] = c * vkp - s * vkq;
          v[k * d + q] = s * vkp + c * vkq;
        }
      }
    }
  }
}

struct Gaussian {
  std::vector<double> mean;
  std::vector<double> cov;  // d x d
};

Gaussian fit_gaussian(const std::vector<std::vector<double>>& feats) {
  int n = static_cast<int>(feats.size());
  int d = static_cast<int>(feats[0].size());
  Gaussian g;
  g.mean.assign(d, 0.0);
  for (const auto& f : feats)
    for (int i = 0; i < d; ++i) g.mean[i] += f[i];
  for (double& m : g.mean) m /= n;
  g.cov.assign(static_cast<std::size_t>(d) * d, 0.0);
  for (const auto& f : feats) {
    for (int i = 0; i < d; ++i) {
      double di = f[i] - g.mean[i];
      for (int j = 0; j < d; ++j) g.cov[i * d + j] += di * (f[j] - g.mean[j]);
    }
  }
  double denom = n > 1 ? n - 1.0 : 1.0;
  for (double& c : g.cov) c /= denom;
  // ridge when the covariance cannot be full rank
  if (n <= d) {
    for (int i = 0; i < d; ++i) g.cov[i * d + i] += 1e-6;
  }
  return g;
}

std::vector<double> sqrtm_psd(const std::vector<double>& m, int d) {
  std::vector<double> a = m, v;
  jacobi_eig(a, v, d);
  std::vector<double> out(static_cast<std::size_t>(d) * d, 0.0);
  for (int k = 0; k < d; ++k) {
    double lam = std::max(0.0, a[k * d + k]);  // clip negative eigenvalues
    double r = std::sqrt(lam);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) out[i * d + j] += r * v[i * d + k] * v[j * d + k];
  }
  return out;
}

std::vector<double> matmul_sq(const std::vector<double>& a,
                              const std::vector<double>& b, int d) {
  std::vector<double> out(static_cast<std::size_t>(d) * d, 0.0);
  for (int i = 0; i < d; ++i)
    for (int k = 0; k < d; ++k) {
      double av = a[i * d + k];
      if (av == 0.0) continue;
      for (int j = 0; j < d; ++j) out[i * d + j] += av * b[k * d + j];
    }
  return out;
}

}  // namespace

double fid(const std::vector<std::vector<double>>& real_feats,
           const std::vector<std::vector<double>>& gen_feats) {
  require(real_feats.size() >= 2 && gen_feats.size() >= 2,
          "fid: needs at least 2 samples per side");
  int d = static_cast<int>(real_feats[0].size());
  require(static_cast<int>(gen_feats[0].size()) == d,
          "fid: feature dims must match");

  Gaussian g1 = fit_gaussian(real_feats);
  Gaussian g2 = fit_gaussian(gen_feats);

  double mean_term = 0.0;
  for (int i = 0; i < d; ++i) {
    double diff = g1.mean[i] - g2.mean[i];
    mean_term += diff * diff;
  }
  double tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < d; ++i) {
    tr1 += g1.cov[i * d + i];
    tr2 += g2.cov[i * d + i];
  }

  // trace of sqrt(S1 S2) via the symmetrized product S1^1/2 S2 S1^1/2
  std::vector<double> s1h = sqrtm_psd(g1.cov, d);
  std::vector<double> inner = matmul_sq(matmul_sq(s1h, g2.cov, d), s1h, d);
  // enforce symmetry before the eigensolve
  for (int i = 0; i < d; ++i)
    for (int j = i + 1; j < d; ++j) {
      double m = 0.5 * (inner[i * d + j] + inner[j * d + i]);
      inner[i * d + j] = m;
      inner[j * d + i] = m;
    }
  std::vector<double> v;
  jacobi_eig(inner, v, d);
  double tr_sqrt = 0.0;
  for (int i = 0; i < d; ++i)
    tr_sqrt += std::sqrt(std::max(0.0, inner[i * d + i]));

  double out = mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
  if (!std::isfinite(out)) throw numeric_error("fid: non-finite result");
  // cancellation can leave a tiny negative residue on identical sets
  return std::max(0.0, out);
}

// ---- diversity / mmodality / r-precision ---------------------------------------

namespace {

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

double diversity(const std::vector<std::vector<double>>& feats, int n_pairs,
                 Rng& rng) {
  int n = static_cast<int>(feats.size());
  require(n >= 2, "diversity: needs at least 2 samples");
  require(n_pairs >= 1, "diversity: n_pairs must be >= 1");
  long long all_pairs = static_cast<long long>(n) * (n - 1) / 2;
  double acc = 0.0;
  if (n_pairs >= all_pairs) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) acc += l2(feats[i], feats[j]);
    return acc / static_cast<double>(all_pairs);
  }
  for (int p = 0; p < n_pairs; ++p) {
    int i = rng.uniform_int(n);
    int j = rng.uniform_int(n - 1);
    if (j >= i) ++j;
    acc += l2(feats[i], feats[j]);
  }
  return acc / n_pairs;
}

double mmodality(const std::vector<std::vector<std::vector<double>>>& per_prompt,
                 int k, Rng& rng) {
  require(!per_prompt.empty(), "mmodality: needs at least one prompt");
  require(k >= 2, "mmodality: k must be >= 2");
  double total = 0.0;
  for (const auto& feats : per_prompt) {
    require(static_cast<int>(feats.size()) >= k,
            "mmodality: fewer samples than k for a prompt");
    std::vector<int> perm = rng.permutation(k);
    double acc = 0.0;
    int pairs = k / 2;
    for (int p = 0; p < pairs; ++p)
      acc += l2(feats[perm[2 * p]], feats[perm[2 * p + 1]]);
    total += acc / pairs;
  }
  return total / per_prompt.size();
}

RPrecision r_precision(const std::vector<std::vector<double>>& text_feats,
                       const std::vector<std::vector<double>>& motion_feats,
                       int pool, Rng& rng) {
  int n = static_cast<int>(text_feats.size());
  require(static_cast<int>(motion_feats.size()) == n,
          "r_precision: paired sets must match");
  require(pool >= 2, "r_precision: pool must be >= 2");
  require(n >= pool, "r_precision: pool larger than the corpus");

  RPrecision r;
  for (int i = 0; i < n; ++i) {
    double true_dist = l2(motion_feats[i], text_feats[i]);
    // pool-1 seeded distractors, distinct, excluding the true text
    std::vector<int> idx;
    idx.reserve(pool - 1);
    while (static_cast<int>(idx.size()) < pool - 1) {
      int j = rng.uniform_int(n);
      if (j == i) continue;
      bool dup = false;
      for (int seen : idx) dup |= seen == j;
      if (!dup) idx.push_back(j);
    }
    int rank = 1;
    for (int j : idx)
      if (l2(motion_feats[i], text_feats[j]) < true_dist) ++rank;
    if (rank <= 1) r.top1 += 1.0;
    if (rank <= 2) r.top2 += 1.0;
    if (rank <= 3) r.top3 += 1.0;
  }
  r.top1 /= n;
  r.top2 /= n;
  r.top3 /= n;
  return r;
}

// ---- long-horizon benchmark -----------------------------------------------------

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

std::string EvalReport::to_text() const {
  std::string out;
  out += "duet long-horizon evaluation report\n";
  for (const auto& [k, v] : config_echo) out += "config." + k + " = " + v + "\n";
  out += "fid = " + fmt(fid_value) + "\n";
  out += "diversity = " + fmt(diversity_value) + "\n";
  out += "mmodality = " + fmt(mmodality_value) + "\n";
  out += "r_precision_top1 = " + fmt(retrieval.top1) + "\n";
  out += "r_precision_top2 = " + fmt(retrieval.top2) + "\n";
  out += "r_precision_top3 = " + fmt(retrieval.top3) + "\n";
  out += "flatness = " + fmt(flatness) + "\n";
  for (const auto& h : horizons) {
    std::string tag = std::to_string(h.length);
    out += "ndms_mean_" + tag + " = " + fmt(h.mean) + "\n";
    out += "ndms_std_" + tag + " = " + fmt(h.stddev) + "\n";
  }
  for (const auto& h : horizons) {
    out += "curve_" + std::to_string(h.length) + " =";
    for (double v : h.curve) out += " " + fmt(v);
    out += "\n";
  }
  return out;
}

std::string EvalReport::curves_csv() const {
  std::string out = "horizon,frame,ndms\n";
  for (const auto& h : horizons) {
    for (std::size_t i = 0; i < h.curve.size(); ++i) {
      out += std::to_string(h.length) + "," + std::to_string(i) + "," +
             fmt(h.curve[i]) + "\n";
    }
  }
  return out;
}

EvalReport longterm_benchmark(const denoiser::DenoiserParams& params,
                              const diffusion::NoiseSchedule& schedule,
                              const std::vector<DyadicSample>& corpus,
                              const FeatureExtractor& fx,
                              const BenchmarkConfig& cfg) {
  require(!cfg.horizons.empty(), "benchmark: horizons must be non-empty");
  require(!corpus.empty(), "benchmark: corpus must be non-empty");
  require(cfg.n_generations >= 2, "benchmark: needs >= 2 generations");

  int fps = corpus[0].a.fps;
  RefWindowPool pool = build_ref_pool(corpus, cfg.ndms.window);

  // Prompts cycle through the corpus texts, seeded.
  Rng prompt_rng = Rng::substream(cfg.seed, "eval_prompts");
  auto pick_prompt = [&](int index) -> std::string {
    const DyadicSample& s = corpus[index % corpus.size()];
    if (s.texts.empty()) return "";
    return s.texts[prompt_rng.uniform_int(static_cast<int>(s.texts.size()))];
  };

  auto generate = [&](int length, const std::string& prompt,
                      std::uint64_t stream_index) {
    Tensor c = motion::embed_text(prompt, params.config.d_text);
    std::optional<Tensor> cond;
    if (!motion::is_null_embedding(c)) cond = c;
    Rng rng = Rng::substream(cfg.seed, "eval_sample", stream_index);
    diffusion::SamplePair pair = diffusion::ddim_sample(
        length, cond, params, schedule, cfg.ddim_steps, cfg.guidance_w, rng);
    DyadicSample s;
    s.a = motion::from_pose_tensor(pair.xa, fps);
    s.b = motion::from_pose_tensor(pair.xb, fps);
    s.texts = {prompt};
    return s;
  };

  EvalReport report;
  std::vector<std::vector<double>> gen_feats;
  std::vector<std::string> gen_prompts;
  std::uint64_t stream = 0;

  for (std::size_t hi = 0; hi < cfg.horizons.size(); ++hi) {
    int length = cfg.horizons[hi];
    require(length >= cfg.ndms.window, "benchmark: horizon below ndms window");
    HorizonResult hr;
    hr.length = length;
    hr.curve.assign(length - cfg.ndms.window + 1, 0.0);
    std::vector<double> per_gen_means;

    for (int g = 0; g < cfg.n_generations; ++g) {
      std::string prompt = pick_prompt(g);
      DyadicSample sample = generate(length, prompt, stream++);
      Rng ndms_rng = Rng::substream(cfg.seed, "eval_ndms", stream);
      std::vector<double> curve =
          ndms_curve_dyadic(sample, pool, cfg.ndms, ndms_rng);
      double m = 0.0;
      for (std::size_t i = 0; i < curve.size(); ++i) {
        hr.curve[i] += curve[i];
        m += curve[i];
      }
      per_gen_means.push_back(m / curve.size());
      if (hi == 0) {
        gen_feats.push_back(fx.motion_features(sample));
        gen_prompts.push_back(prompt);
      }
    }

    for (double& v : hr.curve) v /= cfg.n_generations;
    double mu = 0.0, sq = 0.0;
    for (double v : per_gen_means) {
      mu += v;
      sq += v * v;
    }
    mu /= per_gen_means.size();
    hr.mean = mu;
    hr.stddev = std::sqrt(std::max(0.0, sq / per_gen_means.size() - mu * mu));
    report.horizons.push_back(std::move(hr));
  }

  report.flatness =
      report.horizons.back().mean / std::max(report.horizons.front().mean, 1e-12);

  // Distribution metrics at the shortest horizon.
  std::vector<std::vector<double>> real_feats;
  for (const DyadicSample& s : corpus) real_feats.push_back(fx.motion_features(s));
  report.fid_value = fid(real_feats, gen_feats);

  Rng div_rng = Rng::substream(cfg.seed, "eval_diversity");
  int pairs = cfg.diversity_pairs > 0
                  ? cfg.diversity_pairs
                  : static_cast<int>(gen_feats.size() * (gen_feats.size() - 1) / 2);
  report.diversity_value = diversity(gen_feats, pairs, div_rng);

  // MModality: k generations per prompt at the shortest horizon.
  {
    std::vector<std::vector<std::vector<double>>> per_prompt;
    for (int pi = 0; pi < cfg.mmodality_prompts; ++pi) {
      std::string prompt = pick_prompt(pi);
      std::vector<std::vector<double>> feats;
      for (int g = 0; g < cfg.mmodality_k; ++g) {
        DyadicSample s = generate(cfg.horizons.front(), prompt, stream++);
        feats.push_back(fx.motion_features(s));
      }
      per_prompt.push_back(std::move(feats));
    }
    Rng mm_rng = Rng::substream(cfg.seed, "eval_mmodality");
    report.mmodality_value = mmodality(per_prompt, cfg.mmodality_k, mm_rng);
  }

  // Retrieval protocol on the generated set when it is large enough for the
  // standard pool of 32; random-projection features sit near chance level.
  {
    std::vector<std::vector<double>> text_feats;
    for (const std::string& prompt : gen_prompts)
      text_feats.push_back(fx.text_features(prompt));
    int pool_size = std::min(32, static_cast<int>(text_feats.size()));
    if (pool_size >= 2) {
      Rng rp_rng = Rng::substream(cfg.seed, "eval_rprecision");
      report.retrieval = r_precision(text_feats, gen_feats, pool_size, rp_rng);
    }
  }

  report.config_echo = {
      {"n_generations", std::to_string(cfg.n_generations)},
      {"ddim_steps", std::to_string(cfg.ddim_steps)},
      {"guidance_w", fmt(cfg.guidance_w)},
      {"seed", std::to_string(cfg.seed)},
      {"ndms_window", std::to_string(cfg.ndms.window)},
      {"max_ref_windows", std::to_string(cfg.ndms.max_ref_windows)},
      {"mmodality_prompts", std::to_string(cfg.mmodality_prompts)},
      {"mmodality_k", std::to_string(cfg.mmodality_k)},
      {"diversity_pairs", std::to_string(pairs)},
  };
  return report;
}

}  // namespace duet::eval
