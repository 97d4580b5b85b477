// Acceptance suite: runs every acceptance criterion end to end and prints one
// pass/fail line per criterion. Exits nonzero if any gated criterion fails.
//
//   acceptance [--duet-bin <path>] [--workdir <dir>] [--quick]
//
// --quick shrinks the training budgets for development runs; the official
// gate is the default configuration.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "duet/checkpoint.hpp"
#include "duet/diagnostics.hpp"
#include "duet/diffusion.hpp"
#include "duet/eval.hpp"
#include "duet/motion.hpp"
#include "duet/trainer.hpp"

using namespace duet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Gate {
  int passed = 0;
  int failed = 0;

  void report(int criterion, const char* name, bool pass,
              const std::string& detail) {
    std::printf("[criterion %2d] %-28s %s  (%s)\n", criterion, name,
                pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    pass ? ++passed : ++failed;
  }
};

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---- criterion 1 & 2: gradient and scan oracle suites -------------------------

void run_gradient_suite(Gate& gate) {
  auto t0 = Clock::now();
  auto results = diagnostics::gradient_suite(20);
  double elapsed = seconds_since(t0);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.value);
    pass &= r.pass;
  }
  pass &= elapsed < 120.0;
  gate.report(1, "gradient suite", pass,
              fmt("max rel err %.2e over 20 seeds, %.1fs", worst, elapsed));
}

void run_scan_oracle(Gate& gate) {
  auto t0 = Clock::now();
  auto results = diagnostics::scan_oracle_suite(20);
  double elapsed = seconds_since(t0);
  double worst = 0.0;
  bool pass = true;
  for (const auto& r : results) {
    worst = std::max(worst, r.value);
    pass &= r.pass;
  }
  pass &= elapsed < 30.0;
  gate.report(2, "scan oracle", pass,
              fmt("max abs diff %.2e, chunks {1,3,7,L}, %.1fs", worst, elapsed));
}

// ---- criterion 3: swap equivariance --------------------------------------------

void run_swap_equivariance(Gate& gate) {
  auto t0 = Clock::now();
  int checked = 0;
  bool pass = true;
  for (int trial = 0; trial < 50; ++trial) {
    Rng rng = Rng::substream(0xACCE, "swap", static_cast<std::uint64_t>(trial));
    denoiser::DenoiserConfig cfg;
    cfg.n_blocks = 1 + rng.uniform_int(2);
    cfg.h = 4 + 2 * rng.uniform_int(3);
    cfg.d_pose = 3 + rng.uniform_int(5);
    cfg.d_state = 2 + rng.uniform_int(2);
    cfg.conv_k = 2 + rng.uniform_int(3);
    cfg.d_text = 5;
    cfg.cond_mode = static_cast<denoiser::CondMode>(rng.uniform_int(3));
    cfg.cross_mode =
        trial % 2 == 0 ? denoiser::CrossMode::kConcat : denoiser::CrossMode::kAdd;
    denoiser::DenoiserParams p = denoiser::DenoiserParams::init(cfg, rng);
    // Mild jitter: prepend-mode stacks carry no normalization, so aggressive
    // random parameters can overflow; equivariance is magnitude-independent.
    p.visit([&](const std::string&, Tensor& t) {
      for (auto& v : t.mutable_data()) v += 0.05 * rng.gaussian();
    });
    int L = 2 + rng.uniform_int(11);
    Tensor c = Tensor::randn({cfg.d_text}, rng);
    Tensor xa = Tensor::randn({L, cfg.d_pose}, rng, 0.5);
    Tensor xb = Tensor::randn({L, cfg.d_pose}, rng, 0.5);
    auto fwd = denoiser::denoise_step(xa, xb, 2, 5, c, false, p);
    auto swp = denoiser::denoise_step(xb, xa, 2, 5, c, false, p);
    pass &= fwd.first.data() == swp.second.data();
    pass &= fwd.second.data() == swp.first.data();
    ++checked;
  }
  double elapsed = seconds_since(t0);
  pass &= elapsed < 60.0;
  gate.report(3, "swap equivariance", pass,
              fmt("bit-exact on %d random configs, both cross modes, %.1fs",
                  checked, elapsed));
}

// ---- criterion 6: schedule ------------------------------------------------------

void run_schedule_checks(Gate& gate) {
  bool pass = true;
  std::string note;
  for (int T : {200, 1000}) {
    diffusion::NoiseSchedule s = diffusion::build_schedule(T);
    pass &= s.alpha_bar[0] == 1.0;
    for (int t = 1; t <= T; ++t) pass &= s.alpha_bar[t] < s.alpha_bar[t - 1];
    pass &= s.alpha_bar[T] > 0.0 && s.alpha_bar[T] <= 0.01;
  }
  // Monte Carlo variance of q_sample at x0 = 0
  diffusion::NoiseSchedule s = diffusion::build_schedule(200);
  Rng rng(606);
  double worst_rel = 0.0;
  for (int t : {40, 120, 199}) {
    Tensor x0 = Tensor::zeros({100, 100});
    Tensor eps = Tensor::from_data({100, 100}, rng.gaussian_vec(10000));
    Tensor xt = diffusion::q_sample(x0, t, eps, s);
    double var = 0.0;
    for (double v : xt.data()) var += v * v;
    var /= 10000;
    double expect = 1.0 - s.alpha_bar[t];
    worst_rel = std::max(worst_rel, std::abs(var - expect) / expect);
  }
  pass &= worst_rel < 0.05;
  gate.report(6, "noise schedule", pass,
              fmt("alpha_bar(0)=1, strictly decreasing, tail<=0.01, "
                  "MC variance off by %.1f%%",
                  100.0 * worst_rel));
}

// ---- criterion 7: sampler determinism + closed form ----------------------------

void run_sampler_checks(Gate& gate) {
  bool pass = true;

  // bit-identical resampling
  Rng init = Rng::substream(3, "init");
  denoiser::DenoiserConfig cfg;
  cfg.n_blocks = 1;
  cfg.h = 8;
  cfg.d_pose = 4;
  cfg.d_state = 2;
  cfg.d_text = 6;
  denoiser::DenoiserParams p = denoiser::DenoiserParams::init(cfg, init);
  diffusion::NoiseSchedule s = diffusion::build_schedule(60);
  Tensor c = Tensor::randn({cfg.d_text}, init);
  auto run = [&] {
    Rng rng = Rng::substream(12345, "sample");
    return diffusion::ddim_sample(14, c, p, s, 12, 2.0, rng);
  };
  auto one = run();
  auto two = run();
  pass &= one.xa.data() == two.xa.data();
  pass &= one.xb.data() == two.xb.data();

  // closed-form trajectory of the 1-d linear toy denoiser at steps = T
  int T = 64;
  diffusion::NoiseSchedule sched = diffusion::build_schedule(T);
  double gamma = 0.4;
  diffusion::DenoiseFn fn = [&](const Tensor& xa, const Tensor& xb, int) {
    return std::make_pair(scale(xa, gamma), scale(xb, gamma));
  };
  Rng srng = Rng::substream(777, "sample");
  diffusion::SamplePair out = diffusion::ddim_sample_fn(1, 1, fn, sched, T, srng);
  Rng replay = Rng::substream(777, "sample");
  double xa = replay.gaussian();
  double xb = replay.gaussian();
  for (int t = T; t >= 1; --t) {
    double ab = sched.alpha_bar[t], abp = sched.alpha_bar[t - 1];
    double factor = std::sqrt(abp) * gamma +
                    std::sqrt((1.0 - abp) / (1.0 - ab)) *
                        (1.0 - std::sqrt(ab) * gamma);
    xa *= factor;
    xb *= factor;
  }
  double oracle_err =
      std::max(std::abs(out.xa.item() - xa), std::abs(out.xb.item() - xb));
  pass &= oracle_err < 1e-8;

  // the 50-of-1000 preset visits 50 distinct t values including T
  std::vector<int> times = diffusion::ddim_times(1000, 50);
  std::set<int> distinct(times.begin() + 1, times.end());
  pass &= distinct.size() == 50 && times.back() == 1000;

  gate.report(7, "sampler determinism", pass,
              fmt("bit-identical reruns; linear-denoiser oracle err %.2e",
                  oracle_err));
}

// ---- criterion 8: metric oracles -------------------------------------------------

void run_metric_oracles(Gate& gate) {
  bool pass = true;
  Rng rng(808);

  auto cloud = [&](int n, int d, double shift) {
    std::vector<std::vector<double>> out(n);
    for (auto& row : out) {
      row.resize(d);
      for (int i = 0; i < d; ++i)
        row[i] = rng.gaussian() + (i == 0 ? shift : 0.0);
    }
    return out;
  };

  auto self_feats = cloud(64, 8, 0.0);
  double fid_self = eval::fid(self_feats, self_feats);
  pass &= fid_self < 1e-6;

  auto base = cloud(2000, 8, 0.0);
  auto shifted = cloud(2000, 8, 2.0);
  double fid_shift = eval::fid(base, shifted);
  pass &= std::abs(fid_shift - 4.0) / 4.0 < 0.10;

  // ndms self-score over an exhaustive pool
  auto corpus = motion::generate_dataset(motion::default_templates(), 3, 40,
                                         10, 321);
  eval::NdmsConfig ncfg = eval::NdmsConfig::for_fps(10);
  eval::RefWindowPool pool = eval::build_ref_pool(corpus, ncfg.window);
  Rng nrng(1);
  bool ndms_ok = true;
  std::vector<double> curve = eval::ndms_curve(corpus[0].a, pool, ncfg, nrng);
  for (double v : curve) ndms_ok &= v == 1.0;
  pass &= ndms_ok;

  // retrieval chance level, 1000 independent pairs
  auto text = cloud(1000, 8, 0.0);
  auto mot = cloud(1000, 8, 0.0);
  Rng prng(9);
  eval::RPrecision r = eval::r_precision(text, mot, 32, prng);
  double p0 = 1.0 / 32.0;
  double band = 3.0 * std::sqrt(p0 * (1.0 - p0) / 1000.0);
  pass &= std::abs(r.top1 - p0) < band;
  pass &= r.top1 <= r.top2 && r.top2 <= r.top3;

  // diversity equals exhaustive enumeration on 10 points
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 5; ++i) pts.push_back({0.0, 0.0});
  for (int i = 0; i < 5; ++i) pts.push_back({3.0, 0.0});
  Rng drng(4);
  double div = eval::diversity(pts, 45, drng);
  double brute = 3.0 * 25.0 / 45.0;
  pass &= div == brute;

  gate.report(8, "metric oracles", pass,
              fmt("fid self %.1e, shift err %.1f%%, ndms self 1.0, top1 %.4f",
                  fid_self, 100.0 * std::abs(fid_shift - 4.0) / 4.0, r.top1));
}

// ---- criterion 9: canonicalization ----------------------------------------------

void run_canonicalization(Gate& gate) {
  bool pass = true;
  auto samples = motion::generate_dataset(motion::default_templates(), 12, 40,
                                          10, 911);
  double worst_idem = 0.0, worst_rigid = 0.0, worst_origin = 0.0;
  Rng rng(912);
  for (const auto& s : samples) {
    worst_origin = std::max(
        worst_origin, std::max(std::abs(s.a.joint(0, 0).x),
                               std::abs(s.a.joint(0, 0).z)));
    motion::DyadicSample again = motion::canonicalize(s);
    for (std::size_t k = 0; k < s.a.joints.size(); ++k) {
      worst_idem = std::max(
          worst_idem, (again.a.joints[k] - s.a.joints[k]).norm());
      worst_idem = std::max(
          worst_idem, (again.b.joints[k] - s.b.joints[k]).norm());
    }

    // arbitrary yaw + horizontal translation, then re-canonicalize
    double yaw = rng.uniform(0.0, 6.28);
    double tx = rng.uniform(-4.0, 4.0), tz = rng.uniform(-4.0, 4.0);
    motion::DyadicSample moved = s;
    double cy = std::cos(yaw), sy = std::sin(yaw);
    for (motion::MotionSequence* m : {&moved.a, &moved.b}) {
      for (motion::Vec3& pnt : m->joints) {
        motion::Vec3 r{pnt.x * cy - pnt.z * sy, pnt.y, pnt.x * sy + pnt.z * cy};
        pnt = {r.x + tx, r.y, r.z + tz};
      }
    }
    motion::DyadicSample canon = motion::canonicalize(moved);
    int L = s.a.length();
    for (int f = 0; f < L; f += 7) {
      for (int j1 = 0; j1 < motion::kNumJoints; ++j1) {
        double before =
            (moved.a.joint(f, j1) - moved.b.joint(f, j1)).norm();
        double after = (canon.a.joint(f, j1) - canon.b.joint(f, j1)).norm();
        worst_rigid = std::max(worst_rigid, std::abs(before - after));
      }
    }
  }
  pass &= worst_idem < 1e-12;
  pass &= worst_rigid < 1e-9;
  pass &= worst_origin < 1e-9;
  gate.report(9, "canonicalization", pass,
              fmt("idempotence %.1e, rigidity %.1e, origin %.1e", worst_idem,
                  worst_rigid, worst_origin));
}

// ---- criteria 4, 5: trained checkpoint, length extrapolation --------------------

checkpoint::TrainState desk_training_run(const fs::path& workdir, int epochs,
                                         int n_samples,
                                         std::vector<motion::DyadicSample>* corpus_out) {
  RunConfig cfg = RunConfig::from_preset("desk-m");
  cfg.epochs = epochs;
  cfg.n_samples = n_samples;
  cfg.seed = 42;
  auto corpus = motion::generate_dataset(motion::default_templates(),
                                         cfg.n_samples, cfg.l_train, cfg.fps,
                                         cfg.seed);
  motion::CorpusInfo info = motion::write_corpus((workdir / "corpus").string(),
                                                 corpus);
  std::printf("  [setup] corpus %d samples, hash %s\n", info.count,
              info.hash_hex.c_str());

  fs::path ckpt = workdir / "desk.ckpt";
  if (fs::exists(ckpt)) {
    checkpoint::TrainState state = checkpoint::load(ckpt.string());
    if (state.data_hash == info.hash_hex && state.epoch >= epochs &&
        state.config.epochs == epochs) {
      std::printf("  [setup] reusing cached checkpoint at epoch %d\n",
                  state.epoch);
      *corpus_out = std::move(corpus);
      return state;
    }
  }

  auto t0 = Clock::now();
  auto state = train::train(cfg, corpus, info.hash_hex,
                            [&](const train::EpochLog& log) {
                              if (log.epoch % 10 == 0 || log.epoch == 1) {
                                std::printf("  [train] epoch %d/%d loss %.4f\n",
                                            log.epoch, cfg.epochs, log.loss);
                                std::fflush(stdout);
                              }
                            });
  std::printf("  [train] done in %.0fs, final loss %.4f\n", seconds_since(t0),
              state.last_loss);
  checkpoint::save(ckpt.string(), state);
  *corpus_out = std::move(corpus);
  return state;
}

void run_arbitrary_length(Gate& gate, const checkpoint::TrainState& state) {
  const RunConfig& cfg = state.config;
  diffusion::NoiseSchedule schedule = diffusion::build_schedule(cfg.max_t);
  bool pass = true;

  // sampling at 4x the training length must succeed with finite output
  Tensor c = motion::embed_text("two people walk toward each other", cfg.model.d_text);
  Rng rng = Rng::substream(404, "sample");
  diffusion::SamplePair far = diffusion::ddim_sample(
      4 * cfg.l_train, c, state.params, schedule, 8, 1.0, rng);
  pass &= far.xa.rows() == 4 * cfg.l_train;

  // warm per-step cost, L vs 2L, median of 5
  auto step_time = [&](int L) {
    Tensor xa = Tensor::randn({L, cfg.model.d_pose}, rng);
    Tensor xb = Tensor::randn({L, cfg.model.d_pose}, rng);
    denoiser::denoise_step(xa, xb, cfg.max_t / 2, cfg.max_t, c, false,
                           state.params);  // warmup
    std::vector<double> times;
    for (int i = 0; i < 5; ++i) {
      auto t0 = Clock::now();
      denoiser::denoise_step(xa, xb, cfg.max_t / 2, cfg.max_t, c, false,
                             state.params);
      times.push_back(seconds_since(t0));
    }
    std::sort(times.begin(), times.end());
    return times[2];
  };
  int L = 4 * cfg.l_train;
  double ratio = step_time(2 * L) / step_time(L);
  pass &= ratio >= 1.5 && ratio <= 3.0;

  // static check: every parameter extent derives from config dims alone
  ssm::MambaDims dims = cfg.model.mamba_dims();
  std::set<int> allowed = {1,
                           cfg.model.h,
                           2 * cfg.model.h,
                           cfg.model.d_pose,
                           cfg.model.d_text,
                           cfg.model.d_cond(),
                           2 * cfg.model.d_cond(),
                           dims.d_inner,
                           2 * dims.d_inner,
                           dims.d_state,
                           dims.d_dt,
                           dims.d_dt + 2 * dims.d_state,
                           dims.conv_k};
  bool static_ok = true;
  const_cast<checkpoint::TrainState&>(state).params.visit(
      [&](const std::string&, Tensor& t) {
        for (int e : t.shape()) static_ok &= allowed.count(e) > 0;
      });
  pass &= static_ok;

  gate.report(4, "arbitrary length", pass,
              fmt("4x sampling ok, step ratio L->2L = %.2f, static check %s",
                  ratio, static_ok ? "ok" : "FAILED"));
}

void run_extrapolation(Gate& gate, const checkpoint::TrainState& state,
                       const std::vector<motion::DyadicSample>& corpus,
                       int generations) {
  const RunConfig& cfg = state.config;
  eval::BenchmarkConfig bench;
  bench.horizons = {cfg.l_train, 2 * cfg.l_train, 4 * cfg.l_train};
  bench.n_generations = generations;
  bench.ddim_steps = cfg.ddim_steps;
  bench.guidance_w = cfg.guidance_w;
  bench.seed = 4242;
  bench.ndms = eval::NdmsConfig::for_fps(cfg.fps);

  eval::FeatureExtractor fx(32, cfg.model.d_text);
  auto t0 = Clock::now();
  eval::EvalReport report = eval::longterm_benchmark(
      state.params, diffusion::build_schedule(cfg.max_t), corpus, fx, bench);
  double near = report.horizons.front().mean;
  double fard = report.horizons.back().mean;
  bool pass = fard >= 0.8 * near;
  gate.report(5, "length extrapolation", pass,
              fmt("ndms %.3f / %.3f / %.3f, ratio 4x/1x = %.3f (>= 0.8), %.0fs",
                  report.horizons[0].mean, report.horizons[1].mean,
                  report.horizons[2].mean, fard / near, seconds_since(t0)));
}

// ---- criterion 10: ablation grid --------------------------------------------------

struct AblationRow {
  std::string cond, cross;
  double loss = 0.0;
};

std::vector<AblationRow> ablate_via_cli(const std::string& duet_bin,
                                        const fs::path& workdir, int epochs,
                                        std::uint64_t seed) {
  fs::path table = workdir / ("ablation_" + std::to_string(seed) + ".txt");
  std::string cmd = duet_bin + " ablate --corpus " +
                    (workdir / "corpus").string() + " --out " + table.string() +
                    " --epochs " + std::to_string(epochs) + " --seed " +
                    std::to_string(seed) +
                    " --no-cosine-lr --threads 0 > " +
                    (workdir / "ablate_stdout.txt").string();
  int rc = std::system(cmd.c_str());
  if (rc != 0) throw std::runtime_error("ablate command failed");

  std::ifstream f(table);
  std::vector<AblationRow> rows;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    AblationRow r;
    std::string params;
    std::getline(ss, r.cond, '\t');
    std::getline(ss, r.cross, '\t');
    std::getline(ss, params, '\t');
    std::string loss;
    std::getline(ss, loss);
    r.loss = std::strtod(loss.c_str(), nullptr);
    rows.push_back(std::move(r));
  }
  return rows;
}

void run_ablation(Gate& gate, const std::string& duet_bin,
                  const fs::path& workdir, int epochs) {
  auto t0 = Clock::now();
  auto rows = ablate_via_cli(duet_bin, workdir, epochs, 42);
  bool grid_ok = rows.size() == 6;
  std::set<std::string> cells;
  for (const auto& r : rows) cells.insert(r.cond + "/" + r.cross);
  grid_ok &= cells.size() == 6;

  auto cell_loss = [&](const std::vector<AblationRow>& rs, const char* cond) {
    for (const auto& r : rs) {
      if (r.cond == cond && r.cross == "concat") return r.loss;
    }
    return -1.0;
  };
  double adaln = cell_loss(rows, "adaln");
  double prepend = cell_loss(rows, "prepend");
  bool direction = adaln < prepend;
  std::string note = fmt("grid 3x2 ok; adaln %.4f vs prepend %.4f", adaln,
                         prepend);
  if (!direction) {
    // Soft criterion: retry across two more seeds and report the majority.
    int wins = 0;
    for (std::uint64_t seed : {43ULL, 44ULL}) {
      auto more = ablate_via_cli(duet_bin, workdir, epochs, seed);
      if (cell_loss(more, "adaln") < cell_loss(more, "prepend")) ++wins;
    }
    note += fmt("; direction within noise, adaln wins %d/2 retries (soft, "
                "reported not gated)",
                wins);
  } else {
    note += "; adaln strictly lower";
  }
  note += fmt(", %.0fs", seconds_since(t0));
  gate.report(10, "ablation harness", grid_ok, note);
}

}  // namespace

int main(int argc, char** argv) {
  std::string duet_bin;
  fs::path workdir = "acceptance_out";
  bool quick = false;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "--duet-bin" && i + 1 < argc) duet_bin = argv[++i];
    if (arg == "--workdir" && i + 1 < argc) workdir = argv[++i];
    if (arg == "--quick") quick = true;
  }
  fs::create_directories(workdir);
  if (quick)
    std::printf("note: --quick shrinks budgets; not the acceptance configuration\n");

  int train_epochs = quick ? 4 : 60;
  int corpus_size = quick ? 48 : 200;
  int generations = quick ? 4 : 8;
  int ablate_epochs = quick ? 2 : 5;

  Gate gate;
  run_gradient_suite(gate);
  run_scan_oracle(gate);
  run_swap_equivariance(gate);
  run_schedule_checks(gate);
  run_sampler_checks(gate);
  run_metric_oracles(gate);
  run_canonicalization(gate);

  std::vector<motion::DyadicSample> corpus;
  checkpoint::TrainState state =
      desk_training_run(workdir, train_epochs, corpus_size, &corpus);
  run_arbitrary_length(gate, state);
  run_extrapolation(gate, state, corpus, generations);

  if (!duet_bin.empty()) {
    run_ablation(gate, duet_bin, workdir, ablate_epochs);
  } else {
    std::printf("[criterion 10] ablation harness          SKIP  "
                "(--duet-bin not provided)\n");
    ++gate.failed;
  }

  std::printf("RESULT: %d/%d criteria passed\n", gate.passed,
              gate.passed + gate.failed);
  return gate.failed == 0 ? 0 : 1;
}
