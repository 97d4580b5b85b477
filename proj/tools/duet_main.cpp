// duet: text-conditioned two-person motion synthesis with a selective
// state-space backbone. Subcommands cover dataset generation, diffusion
// training, sampling, the long-horizon evaluation protocol, the conditioning /
// cross-conditioning ablation grid, and numeric self-checks.
//
// Exit codes: 0 success, 2 config error, 3 I/O error, 4 numeric failure.

#include <fcntl.h>
#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "duet/checkpoint.hpp"
#include "duet/config.hpp"
#include "duet/diagnostics.hpp"
#include "duet/diffusion.hpp"
#include "duet/eval.hpp"
#include "duet/motion.hpp"
#include "duet/trainer.hpp"

namespace fs = std::filesystem;
using namespace duet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

// Guards an output path against concurrent writers.
class LockFile {
 public:
  explicit LockFile(const std::string& target) : path_(target + ".lock") {
    fs::path parent = fs::path(path_).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw motion::io_error("output path is locked by another run: " + path_);
    }
    ::close(fd);
  }
  ~LockFile() { ::unlink(path_.c_str()); }
  LockFile(const LockFile&) = delete;

 private:
  std::string path_;
};

// Options stage into this struct; a preset forms the base and explicitly
// passed flags override it afterwards, independent of argument order.
struct CliState {
  std::string preset = "desk-m";
  RunConfig staged;  // receives raw option values
  std::string cond_mode = "adaln";
  std::string cross_mode = "concat";
  bool no_cosine_lr = false;

  RunConfig resolve(const CLI::App* sub) const {
    RunConfig cfg = RunConfig::from_preset(preset);
    auto took = [&](const char* name) {
      const CLI::Option* opt =
          const_cast<CLI::App*>(sub)->get_option_no_throw(name);
      return opt != nullptr && opt->count() > 0;
    };
    if (took("--blocks")) cfg.model.n_blocks = staged.model.n_blocks;
    if (took("--latent")) cfg.model.h = staged.model.h;
    if (took("--d-state")) cfg.model.d_state = staged.model.d_state;
    if (took("--expansion")) cfg.model.expansion = staged.model.expansion;
    if (took("--conv-k")) cfg.model.conv_k = staged.model.conv_k;
    if (took("--d-text")) cfg.model.d_text = staged.model.d_text;
    if (took("--cond-mode"))
      cfg.model.cond_mode = denoiser::cond_mode_from_string(cond_mode);
    if (took("--cross-mode"))
      cfg.model.cross_mode = denoiser::cross_mode_from_string(cross_mode);
    if (took("--T")) cfg.max_t = staged.max_t;
    if (took("--ddim-steps")) cfg.ddim_steps = staged.ddim_steps;
    if (took("--guidance")) cfg.guidance_w = staged.guidance_w;
    if (took("--mask-prob")) cfg.mask_prob = staged.mask_prob;
    if (took("--epochs")) cfg.epochs = staged.epochs;
    if (took("--batch")) cfg.batch = staged.batch;
    if (took("--lr")) cfg.lr = staged.lr;
    if (no_cosine_lr) cfg.cosine_lr = false;
    if (took("--clip-norm")) cfg.clip_norm = staged.clip_norm;
    if (took("--lambda-vel")) cfg.lambda_vel = staged.lambda_vel;
    if (took("--lambda-rel")) cfg.lambda_rel = staged.lambda_rel;
    if (took("--threads")) cfg.threads = staged.threads;
    if (took("--n-samples")) cfg.n_samples = staged.n_samples;
    if (took("--length")) cfg.l_train = staged.l_train;
    if (took("--fps")) cfg.fps = staged.fps;
    if (took("--seed")) cfg.seed = staged.seed;
    return cfg;
  }
};

void add_model_flags(CLI::App* sub, CliState& s) {
  sub->add_option("--preset", s.preset,
                  "Model preset: desk-s, desk-m, desk-l, paper")
      ->envname("DUET_PRESET");
  sub->add_option("--blocks", s.staged.model.n_blocks, "Cooperative blocks");
  sub->add_option("--latent", s.staged.model.h, "Latent width h");
  sub->add_option("--d-state", s.staged.model.d_state, "SSM state width");
  sub->add_option("--expansion", s.staged.model.expansion, "SSM expansion");
  sub->add_option("--conv-k", s.staged.model.conv_k, "Causal conv kernel");
  sub->add_option("--d-text", s.staged.model.d_text, "Text embedding width");
  sub->add_option("--cond-mode", s.cond_mode,
                  "Conditioning: adaln, prepend, both");
  sub->add_option("--cross-mode", s.cross_mode,
                  "Cross-conditioning: concat, add");
}

void add_diffusion_flags(CLI::App* sub, CliState& s) {
  sub->add_option("--T", s.staged.max_t, "Diffusion steps (training)");
  sub->add_option("--ddim-steps", s.staged.ddim_steps, "DDIM sampling steps");
  sub->add_option("--guidance", s.staged.guidance_w, "Guidance scale w");
  sub->add_option("--mask-prob", s.staged.mask_prob,
                  "Condition masking probability");
}

void add_train_flags(CLI::App* sub, CliState& s) {
  sub->add_option("--epochs", s.staged.epochs, "Training epochs");
  sub->add_option("--batch", s.staged.batch, "Batch size");
  sub->add_option("--lr", s.staged.lr, "Learning rate");
  sub->add_flag("--no-cosine-lr", s.no_cosine_lr, "Disable cosine lr decay");
  sub->add_option("--clip-norm", s.staged.clip_norm,
                  "Global gradient-norm clip (<= 0 disables)");
  sub->add_option("--lambda-vel", s.staged.lambda_vel, "Velocity loss weight");
  sub->add_option("--lambda-rel", s.staged.lambda_rel,
                  "Person-offset loss weight");
  sub->add_option("--threads", s.staged.threads,
                  "Worker threads (0 = hardware)")
      ->envname("DUET_THREADS");
}

void add_data_flags(CLI::App* sub, CliState& s) {
  sub->add_option("--n-samples", s.staged.n_samples, "Corpus size");
  sub->add_option("--length", s.staged.l_train, "Frames per sequence");
  sub->add_option("--fps", s.staged.fps, "Frames per second");
}

void add_seed_flag(CLI::App* sub, CliState& s) {
  sub->add_option("--seed", s.staged.seed, "Root seed")->envname("DUET_SEED");
}

std::vector<motion::DyadicSample> load_corpus_checked(const std::string& dir) {
  auto corpus = motion::read_corpus(dir);
  if (corpus.empty()) throw motion::io_error("corpus is empty: " + dir);
  return corpus;
}

// ---- subcommand bodies -------------------------------------------------------

int cmd_datagen(const RunConfig& cfg, const std::string& out,
                const std::string& templates_csv) {
  std::vector<std::string> templates;
  if (templates_csv.empty()) {
    templates = motion::default_templates();
  } else {
    std::stringstream ss(templates_csv);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) templates.push_back(part);
    }
  }
  fs::create_directories(out);
  LockFile lock(out + "/corpus");
  auto samples = motion::generate_dataset(templates, cfg.n_samples, cfg.l_train,
                                          cfg.fps, cfg.seed);
  motion::CorpusInfo info = motion::write_corpus(out, samples);
  std::printf("manifest %s\n", info.manifest_path.c_str());
  std::printf("corpus_hash %s\n", info.hash_hex.c_str());
  std::printf("samples %d\n", info.count);
  return kExitOk;
}

int cmd_train(RunConfig cfg, const std::string& corpus_dir,
              const std::string& out, const std::string& resume_path) {
  auto corpus = load_corpus_checked(corpus_dir);
  cfg.n_samples = static_cast<int>(corpus.size());
  cfg.l_train = corpus[0].a.length();
  cfg.fps = corpus[0].a.fps;
  std::string hash = motion::corpus_hash(corpus_dir);

  LockFile lock(out);
  checkpoint::TrainState resumed;
  checkpoint::TrainState* resume_ptr = nullptr;
  if (!resume_path.empty()) {
    resumed = checkpoint::load(resume_path);
    resume_ptr = &resumed;
    std::printf("resuming from %s at epoch %d\n", resume_path.c_str(),
                resumed.epoch);
  }

  auto state = train::train(cfg, corpus, hash,
                            [&](const train::EpochLog& log) {
                              std::printf("epoch %d/%d loss %.6f lr x%.3f",
                                          log.epoch, cfg.epochs, log.loss,
                                          log.lr_scale);
                              if (log.skipped_steps > 0)
                                std::printf(" skipped %d", log.skipped_steps);
                              std::printf("\n");
                              std::fflush(stdout);
                            },
                            resume_ptr);
  checkpoint::save(out, state);
  std::printf("checkpoint %s\n", out.c_str());
  std::printf("manifest %s\n", checkpoint::manifest_path(out).c_str());
  std::printf("params %lld\n", state.params.param_count());
  std::printf("final_loss %.6f\n", state.last_loss);
  return kExitOk;
}

int cmd_sample(const std::string& ckpt_path, const std::string& prompt,
               int length, std::uint64_t seed, const std::string& out,
               int steps, double guidance, const std::string& sampler,
               bool have_steps, bool have_guidance, bool have_seed) {
  checkpoint::TrainState state = checkpoint::load(ckpt_path);
  const RunConfig& cfg = state.config;
  int use_steps = have_steps ? steps : cfg.ddim_steps;
  double use_w = have_guidance ? guidance : cfg.guidance_w;
  std::uint64_t use_seed = have_seed ? seed : cfg.seed;

  Tensor emb = motion::embed_text(prompt, cfg.model.d_text);
  std::optional<Tensor> cond;
  if (motion::is_null_embedding(emb)) {
    std::fprintf(stderr,
                 "warning: empty prompt, sampling with the null condition\n");
  } else {
    cond = emb;
  }

  diffusion::NoiseSchedule schedule = diffusion::build_schedule(cfg.max_t);
  Rng rng = Rng::substream(use_seed, "sample");
  diffusion::SamplePair pair;
  if (sampler == "ddim") {
    pair = diffusion::ddim_sample(length, cond, state.params, schedule,
                                  use_steps, use_w, rng);
  } else if (sampler == "ddpm") {
    pair = diffusion::ddpm_sample(length, cond, state.params, schedule, rng);
  } else {
    throw std::invalid_argument("unknown sampler: " + sampler);
  }

  motion::DyadicSample s;
  s.a = motion::from_pose_tensor(pair.xa, cfg.fps);
  s.b = motion::from_pose_tensor(pair.xb, cfg.fps);
  s.texts = {prompt};
  s.id = "sample_" + std::to_string(use_seed);
  s.template_name = "generated";
  LockFile lock(out);
  motion::write_motion(out, s);
  std::printf("motion %s\n", out.c_str());
  std::printf("frames %d fps %d\n", length, cfg.fps);
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& corpus_dir,
             const std::string& horizons_csv, std::uint64_t seed,
             const std::string& out, const std::string& csv_out,
             int generations, bool have_seed) {
  checkpoint::TrainState state = checkpoint::load(ckpt_path);
  const RunConfig& cfg = state.config;
  auto corpus = load_corpus_checked(corpus_dir);

  eval::BenchmarkConfig bench;
  if (horizons_csv.empty()) {
    bench.horizons = {cfg.l_train, 2 * cfg.l_train, 4 * cfg.l_train};
  } else {
    std::stringstream ss(horizons_csv);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (!part.empty()) bench.horizons.push_back(std::stoi(part));
    }
  }
  bench.n_generations = generations;
  bench.ddim_steps = cfg.ddim_steps;
  bench.guidance_w = cfg.guidance_w;
  bench.seed = have_seed ? seed : cfg.seed;
  bench.ndms = eval::NdmsConfig::for_fps(corpus[0].a.fps);

  eval::FeatureExtractor fx(32, cfg.model.d_text);
  eval::EvalReport report =
      eval::longterm_benchmark(state.params, diffusion::build_schedule(cfg.max_t),
                               corpus, fx, bench);

  LockFile lock(out);
  {
    std::ofstream f(out, std::ios::trunc | std::ios::binary);
    if (!f) throw motion::io_error("cannot open report path " + out);
    f << report.to_text();
  }
  if (!csv_out.empty()) {
    std::ofstream f(csv_out, std::ios::trunc | std::ios::binary);
    if (!f) throw motion::io_error("cannot open csv path " + csv_out);
    f << report.curves_csv();
  }

  for (const auto& h : report.horizons)
    std::printf("ndms horizon %d frames: mean %.4f std %.4f\n", h.length,
                h.mean, h.stddev);
  std::printf("flatness %.4f\n", report.flatness);
  std::printf("fid %.4f diversity %.4f mmodality %.4f\n", report.fid_value,
              report.diversity_value, report.mmodality_value);
  std::printf("report %s\n", out.c_str());
  return kExitOk;
}

int cmd_ablate(RunConfig base, const std::string& corpus_dir,
               const std::string& out) {
  auto corpus = load_corpus_checked(corpus_dir);
  base.n_samples = static_cast<int>(corpus.size());
  base.l_train = corpus[0].a.length();
  base.fps = corpus[0].a.fps;
  std::string hash = motion::corpus_hash(corpus_dir);

  const denoiser::CondMode conds[] = {denoiser::CondMode::kAdaln,
                                      denoiser::CondMode::kPrepend,
                                      denoiser::CondMode::kBoth};
  const denoiser::CrossMode crosses[] = {denoiser::CrossMode::kConcat,
                                         denoiser::CrossMode::kAdd};

  LockFile lock(out);
  std::string table =
      "cond_mode\tcross_mode\tparams\tfinal_loss\n";
  double loss_adaln_concat = 0.0, loss_prepend_concat = 0.0;
  for (denoiser::CondMode cond : conds) {
    for (denoiser::CrossMode cross : crosses) {
      RunConfig cell = base;
      cell.model.cond_mode = cond;
      cell.model.cross_mode = cross;
      auto state = train::train(cell, corpus, hash, nullptr);
      char row[160];
      std::snprintf(row, sizeof(row), "%s\t%s\t%lld\t%.6f\n",
                    denoiser::to_string(cond), denoiser::to_string(cross),
                    state.params.param_count(), state.last_loss);
      table += row;
      std::printf("%s", row);
      std::fflush(stdout);
      if (cross == denoiser::CrossMode::kConcat) {
        if (cond == denoiser::CondMode::kAdaln) loss_adaln_concat = state.last_loss;
        if (cond == denoiser::CondMode::kPrepend)
          loss_prepend_concat = state.last_loss;
      }
    }
  }
  std::ofstream f(out, std::ios::trunc | std::ios::binary);
  if (!f) throw motion::io_error("cannot open ablation output " + out);
  f << table;
  std::printf("adaln_vs_prepend %s (%.6f vs %.6f)\n",
              loss_adaln_concat < loss_prepend_concat ? "lower" : "not-lower",
              loss_adaln_concat, loss_prepend_concat);
  std::printf("table %s\n", out.c_str());
  return kExitOk;
}

int cmd_grad_check(int seeds) {
  auto grads = diagnostics::gradient_suite(seeds);
  auto scans = diagnostics::scan_oracle_suite(seeds);
  bool ok = true;
  for (const auto* suite : {&grads, &scans}) {
    for (const auto& r : *suite) {
      std::printf("%-38s max_err %.3e  (< %.0e)  %s\n", r.name.c_str(), r.value,
                  r.threshold, r.pass ? "PASS" : "FAIL");
      ok &= r.pass;
    }
  }
  if (!ok) {
    std::fprintf(stderr, "grad-check: failures detected\n");
    return kExitNumeric;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "duet: text-conditioned two-person motion synthesis with a "
      "state-space backbone"};
  app.require_subcommand(1);
  // Global config file; subcommand options live in sections, e.g. [train].
  app.set_config("--config", "", "Read options from an INI config file");

  CliState s;

  // datagen
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic corpus");
  std::string dg_out, dg_templates;
  datagen->add_option("--out", dg_out, "Corpus directory")
      ->required()
      ->envname("DUET_CORPUS");
  datagen->add_option("--templates", dg_templates,
                      "Comma-separated template names (default: all)");
  add_data_flags(datagen, s);
  add_seed_flag(datagen, s);

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a denoiser checkpoint");
  std::string tr_corpus, tr_out = "model.ckpt", tr_resume;
  train_cmd->add_option("--corpus", tr_corpus, "Corpus directory")
      ->required()
      ->envname("DUET_CORPUS");
  train_cmd->add_option("--out", tr_out, "Checkpoint path");
  train_cmd->add_option("--resume", tr_resume, "Checkpoint to resume from");
  add_model_flags(train_cmd, s);
  add_diffusion_flags(train_cmd, s);
  add_train_flags(train_cmd, s);
  add_seed_flag(train_cmd, s);

  // sample
  auto* sample_cmd =
      app.add_subcommand("sample", "Sample a dyadic motion from a checkpoint");
  std::string sm_ckpt, sm_prompt, sm_out = "sample.dym", sm_sampler = "ddim";
  int sm_length = 40, sm_steps = 0;
  double sm_guidance = 0.0;
  std::uint64_t sm_seed = 0;
  sample_cmd->add_option("--checkpoint", sm_ckpt, "Checkpoint path")->required();
  sample_cmd->add_option("--prompt", sm_prompt, "Text prompt");
  sample_cmd->add_option("--length", sm_length, "Frames to generate");
  sample_cmd->add_option("--seed", sm_seed, "Sampling seed")
      ->envname("DUET_SEED");
  sample_cmd->add_option("--out", sm_out, "Output .dym path");
  sample_cmd->add_option("--steps", sm_steps, "DDIM steps");
  sample_cmd->add_option("--guidance", sm_guidance, "Guidance scale");
  sample_cmd->add_option("--sampler", sm_sampler,
                         "Reverse sampler: ddim (default) or ddpm");

  // eval
  auto* eval_cmd =
      app.add_subcommand("eval", "Long-horizon benchmark and metric suite");
  std::string ev_ckpt, ev_corpus, ev_horizons, ev_out = "report.txt", ev_csv;
  int ev_generations = 8;
  std::uint64_t ev_seed = 0;
  eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
  eval_cmd->add_option("--corpus", ev_corpus, "Reference corpus directory")
      ->required()
      ->envname("DUET_CORPUS");
  eval_cmd->add_option("--horizons", ev_horizons,
                       "Comma-separated frame counts (default 1x,2x,4x)");
  eval_cmd->add_option("--seed", ev_seed, "Evaluation seed")
      ->envname("DUET_SEED");
  eval_cmd->add_option("--out", ev_out, "Report path");
  eval_cmd->add_option("--csv", ev_csv, "Optional per-frame curve CSV path");
  eval_cmd->add_option("--generations", ev_generations,
                       "Generations per horizon");

  // ablate
  auto* ablate_cmd = app.add_subcommand(
      "ablate", "Sweep conditioning x cross-conditioning and train each cell");
  std::string ab_corpus, ab_out = "ablation.txt";
  ablate_cmd->add_option("--corpus", ab_corpus, "Corpus directory")
      ->required()
      ->envname("DUET_CORPUS");
  ablate_cmd->add_option("--out", ab_out, "Table output path");
  add_model_flags(ablate_cmd, s);
  add_diffusion_flags(ablate_cmd, s);
  add_train_flags(ablate_cmd, s);
  add_seed_flag(ablate_cmd, s);

  // grad-check
  auto* gc_cmd = app.add_subcommand(
      "grad-check", "Run the gradient and scan oracle suites");
  int gc_seeds = 20;
  gc_cmd->add_option("--seeds", gc_seeds, "Random instances per check");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*datagen) return cmd_datagen(s.resolve(datagen), dg_out, dg_templates);
    if (*train_cmd)
      return cmd_train(s.resolve(train_cmd), tr_corpus, tr_out, tr_resume);
    if (*sample_cmd)
      return cmd_sample(sm_ckpt, sm_prompt, sm_length, sm_seed, sm_out,
                        sm_steps, sm_guidance, sm_sampler,
                        sample_cmd->count("--steps") > 0,
                        sample_cmd->count("--guidance") > 0,
                        sample_cmd->count("--seed") > 0);
    if (*eval_cmd)
      return cmd_eval(ev_ckpt, ev_corpus, ev_horizons, ev_seed, ev_out, ev_csv,
                      ev_generations, eval_cmd->count("--seed") > 0);
    if (*ablate_cmd) return cmd_ablate(s.resolve(ablate_cmd), ab_corpus, ab_out);
    if (*gc_cmd) return cmd_grad_check(gc_seeds);
  } catch (const motion::io_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const numeric_error& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return kExitOk;
}
