#include "duet/trainer.hpp"

#include <cmath>
#include <thread>

#include "duet/diffusion.hpp"

namespace duet::train {

using detail::require;

namespace {

struct CorpusTensors {
  std::vector<Tensor> x0a, x0b;
  std::vector<std::vector<Tensor>> text_embeddings;  // per sample, per prompt
};

CorpusTensors prepare(const std::vector<motion::DyadicSample>& corpus,
                      const RunConfig& cfg) {
  CorpusTensors out;
  for (const motion::DyadicSample& s : corpus) {
    require(s.a.length() == cfg.l_train,
            "train: corpus length does not match l_train");
    out.x0a.push_back(motion::to_pose_tensor(s.a));
    out.x0b.push_back(motion::to_pose_tensor(s.b));
    std::vector<Tensor> embs;
    for (const std::string& text : s.texts)
      embs.push_back(motion::embed_text(text, cfg.model.d_text));
    if (embs.empty()) embs.push_back(Tensor::zeros({cfg.model.d_text}));
    out.text_embeddings.push_back(std::move(embs));
  }
  return out;
}

}  // namespace

checkpoint::TrainState train(const RunConfig& config,
                             const std::vector<motion::DyadicSample>& corpus,
                             const std::string& data_hash,
                             const EpochCallback& on_epoch,
                             checkpoint::TrainState* resume) {
  require(!corpus.empty(), "train: corpus is empty");
  require(config.batch >= 1, "train: batch must be >= 1");
  require(config.epochs >= 1, "train: epochs must be >= 1");

  checkpoint::TrainState state;
  if (resume) {
    // The epoch budget may be extended on resume; everything else must match.
    auto strip_epochs = [](std::vector<std::pair<std::string, std::string>> e) {
      std::erase_if(e, [](const auto& kv) { return kv.first == "epochs"; });
      return e;
    };
    require(strip_epochs(config.to_entries()) ==
                strip_epochs(resume->config.to_entries()),
            "train: resume config mismatch");
    require(resume->data_hash == data_hash, "train: resume corpus mismatch");
    state = std::move(*resume);
    state.config = config;
  } else {
    state.config = config;
    state.data_hash = data_hash;
    Rng init = Rng::substream(config.seed, "init");
    state.params = denoiser::DenoiserParams::init(config.model, init);
  }

  diffusion::NoiseSchedule schedule = diffusion::build_schedule(config.max_t);
  diffusion::LossWeights weights{config.lambda_vel, config.lambda_rel};
  diffusion::AdamConfig adam_cfg;
  adam_cfg.lr = config.lr;
  diffusion::Adam opt(state.params, adam_cfg);
  if (!state.adam_m.empty()) {
    opt.moments_m() = std::move(state.adam_m);
    opt.moments_v() = std::move(state.adam_v);
    opt.set_step_count(state.adam_steps);
  }

  CorpusTensors data = prepare(corpus, config);
  int n = static_cast<int>(corpus.size());
  int n_threads = config.threads > 0
                      ? config.threads
                      : std::max(1u, std::thread::hardware_concurrency());

  int slots = opt.num_slots();
  std::vector<Tensor> slot_tensors;
  state.params.visit(
      [&](const std::string&, Tensor& t) { slot_tensors.push_back(t); });

  for (int epoch = state.epoch; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng = Rng::substream(config.seed, "train_shuffle",
                                     static_cast<std::uint64_t>(epoch));
    std::vector<int> order = shuffle_rng.permutation(n);

    double lr_scale = 1.0;
    if (config.cosine_lr) {
      double frac = static_cast<double>(epoch) / config.epochs;
      lr_scale = 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
    }

    double epoch_loss = 0.0;
    int batches = 0;
    int skipped = 0;
    for (int start = 0; start < n; start += config.batch) {
      int bsz = std::min(config.batch, n - start);

      // One loss + backward per sample, parallel across batch members; every
      // random draw comes from a stream keyed by (epoch, position), so the
      // result is independent of the thread count.
      std::vector<std::vector<std::vector<double>>> sample_grads(bsz);
      std::vector<double> sample_losses(bsz, 0.0);
      std::vector<std::string> worker_errors(bsz);
      std::vector<std::string> fatal_errors(bsz);

      auto run_sample = [&](int k) {
        try {
          int sample_idx = order[start + k];
          Rng rng = Rng::substream(
              config.seed, "train",
              static_cast<std::uint64_t>(epoch) * n + start + k);

          diffusion::TrainItem item;
          item.x0a = data.x0a[sample_idx];
          item.x0b = data.x0b[sample_idx];
          const auto& embs = data.text_embeddings[sample_idx];
          item.text_embedding =
              embs[rng.uniform_int(static_cast<int>(embs.size()))];
          item.mask = rng.bernoulli(config.mask_prob) ||
                      motion::is_null_embedding(item.text_embedding);
          item.t = 1 + rng.uniform_int(config.max_t);
          item.eps_a = Tensor::randn(item.x0a.shape(), rng);
          item.eps_b = Tensor::randn(item.x0b.shape(), rng);

          GradTape tape;
          Tensor loss = scale(
              diffusion::training_loss_item(item, state.params, schedule, weights),
              1.0 / bsz);
          sample_losses[k] = loss.item();
          tape.backward(loss);

          auto& grads = sample_grads[k];
          grads.resize(slots);
          for (int si = 0; si < slots; ++si) {
            auto g = tape.grad(slot_tensors[si]);
            grads[si].assign(slot_tensors[si].size(), 0.0);
            if (!g.empty()) grads[si].assign(g.begin(), g.end());
          }
        } catch (const numeric_error& e) {
          worker_errors[k] = e.what();
        } catch (const std::exception& e) {
          fatal_errors[k] = e.what();
        }
      };

      if (n_threads <= 1 || bsz == 1) {
        for (int k = 0; k < bsz; ++k) run_sample(k);
      } else {
        std::vector<std::thread> pool;
        int workers = std::min(n_threads, bsz);
        for (int w = 0; w < workers; ++w) {
          pool.emplace_back([&, w] {
            for (int k = w; k < bsz; k += workers) run_sample(k);
          });
        }
        for (auto& th : pool) th.join();
      }
      for (int k = 0; k < bsz; ++k) {
        if (!fatal_errors[k].empty())
          throw std::runtime_error("train: " + fatal_errors[k]);
      }
      // A non-finite loss aborts the step: parameters stay untouched and
      // training moves on to the next batch.
      bool step_ok = true;
      for (int k = 0; k < bsz; ++k) step_ok &= worker_errors[k].empty();
      if (!step_ok) {
        ++skipped;
        continue;
      }

      // fixed, sorted accumulation order: sample 0, 1, ... within the batch
      std::vector<std::vector<double>> total(slots);
      for (int si = 0; si < slots; ++si)
        total[si].assign(slot_tensors[si].size(), 0.0);
      double batch_loss = 0.0;
      for (int k = 0; k < bsz; ++k) {
        batch_loss += sample_losses[k];
        for (int si = 0; si < slots; ++si) {
          const auto& g = sample_grads[k][si];
          auto& acc = total[si];
          for (std::size_t i = 0; i < g.size(); ++i) acc[i] += g[i];
        }
      }

      if (config.clip_norm > 0.0) {
        double sq = 0.0;
        for (const auto& g : total)
          for (double v : g) sq += v * v;
        double norm = std::sqrt(sq);
        if (norm > config.clip_norm) {
          double s = config.clip_norm / norm;
          for (auto& g : total)
            for (double& v : g) v *= s;
        }
      }

      opt.step(total, lr_scale);
      epoch_loss += batch_loss;
      ++batches;
    }

    if (batches == 0) {
      throw numeric_error("train: every step of epoch " +
                          std::to_string(epoch + 1) + " produced a non-finite "
                          "loss");
    }
    state.epoch = epoch + 1;
    state.last_loss = epoch_loss / batches;
    if (on_epoch) on_epoch({state.epoch, state.last_loss, lr_scale, skipped});
  }

  state.adam_m = std::move(opt.moments_m());
  state.adam_v = std::move(opt.moments_v());
  state.adam_steps = opt.step_count();
  return state;
}

}  // namespace duet::train
