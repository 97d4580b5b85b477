#pragma once

// Cosine noise schedule, forward noising, the training objective, and the
// DDPM/DDIM reverse samplers with classifier-free guidance. Samplers are pure
// deterministic functions of (params, seed) and accept any sequence length.

#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "duet/denoiser.hpp"
#include "duet/rng.hpp"
#include "duet/tensor.hpp"

namespace duet::diffusion {

struct NoiseSchedule {
  int max_t = 0;
  // alpha_bar[t] for t in 0..max_t; alpha_bar[0] == 1 exactly.
  std::vector<double> alpha_bar;
  // beta[t] = 1 - alpha_bar(t)/alpha_bar(t-1), clipped to <= 0.999; beta[0]=0.
  std::vector<double> beta;

  double alpha(int t) const { return 1.0 - beta[t]; }
};

// Cosine schedule: f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2), s = 0.008,
// alpha_bar(t) = f(t)/f(0).
NoiseSchedule build_schedule(int max_t);

// x_t = sqrt(alpha_bar(t)) * x0 + sqrt(1 - alpha_bar(t)) * eps, 1 <= t <= T.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& s);

struct LossWeights {
  double lambda_vel = 1.0;
  double lambda_rel = 1.0;
};

// One training example with its noise draws.
struct TrainItem {
  Tensor x0a, x0b;         // clean pose signals, [L x d_pose]
  Tensor text_embedding;   // [d_text]
  bool mask = false;       // null-condition flag
  int t = 1;
  Tensor eps_a, eps_b;     // [L x d_pose]
};

// Loss assembly given clean-signal predictions: dyadic reconstruction MSE
// + lambda_vel * frame-velocity MSE + lambda_rel * MSE of per-frame
// person-a-to-person-b offsets.
Tensor dyadic_loss(const Tensor& pred_a, const Tensor& pred_b,
                   const Tensor& x0a, const Tensor& x0b, const LossWeights& w);

// Noise one item, run the denoiser, assemble the loss; built on the active
// tape so gradients flow to the denoiser parameters.
Tensor training_loss_item(const TrainItem& item,
                          const denoiser::DenoiserParams& params,
                          const NoiseSchedule& s, const LossWeights& w);

// ---- samplers ---------------------------------------------------------------

// Single-step denoiser abstraction so samplers can be driven by toy models in
// tests; returns clean-signal predictions for both persons.
using DenoiseFn = std::function<std::pair<Tensor, Tensor>(
    const Tensor& xa_t, const Tensor& xb_t, int t)>;

struct SamplePair {
  Tensor xa, xb;  // [L x d_pose]
};

// The t subsequence visited by DDIM: round(i*T/steps) for i = 0..steps.
// Strictly increasing (requires steps <= T), starts at 0, ends at T.
std::vector<int> ddim_times(int max_t, int steps);

// Ancestral sampler over every step T..1. Draw order from rng: init xa, then
// init xb, then one z per person per step with noise (t > 1).
SamplePair ddpm_sample_fn(int length, int d_pose, const DenoiseFn& fn,
                          const NoiseSchedule& s, Rng& rng);

// Deterministic (eta = 0) sampler over the ddim_times subsequence.
SamplePair ddim_sample_fn(int length, int d_pose, const DenoiseFn& fn,
                          const NoiseSchedule& s, int steps, Rng& rng);

// Model-bound samplers. A missing text embedding means null conditioning.
// guidance_w blends x0_hat = x0_null + w * (x0_cond - x0_null); the null
// branch is skipped when w == 1 or the condition is absent.
SamplePair ddpm_sample(int length, const std::optional<Tensor>& text_embedding,
                       const denoiser::DenoiserParams& p,
                       const NoiseSchedule& s, Rng& rng);
SamplePair ddim_sample(int length, const std::optional<Tensor>& text_embedding,
                       const denoiser::DenoiserParams& p,
                       const NoiseSchedule& s, int steps, double guidance_w,
                       Rng& rng);

// ---- optimizer --------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First-order adaptive-moment optimizer over the denoiser parameter set.
// Gradient vectors are aligned with DenoiserParams::visit order.
class Adam {
 public:
  Adam(denoiser::DenoiserParams& params, AdamConfig config);

  int num_slots() const { return static_cast<int>(slots_.size()); }
  // grads[i] must match parameter i's element count. lr_scale multiplies the
  // base learning rate (cosine decay hook).
  void step(const std::vector<std::vector<double>>& grads, double lr_scale);

  std::int64_t step_count() const { return step_count_; }
  // Serialized moment state, visit-ordered: m then v per parameter.
  std::vector<std::vector<double>>& moments_m() { return m_; }
  std::vector<std::vector<double>>& moments_v() { return v_; }
  void set_step_count(std::int64_t n) { step_count_ = n; }

 private:
  denoiser::DenoiserParams* params_;
  AdamConfig config_;
  std::vector<Tensor> slots_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_count_ = 0;
};

}  // namespace duet::diffusion
