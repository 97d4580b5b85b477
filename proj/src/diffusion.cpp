#include "duet/diffusion.hpp"

#include <cmath>

namespace duet::diffusion {

using detail::require;

NoiseSchedule build_schedule(int max_t) {
  require(max_t >= 1, "build_schedule: T must be >= 1");
  constexpr double kS = 0.008;
  constexpr double kPi = 3.14159265358979323846;
  auto f = [&](double t) {
    double arg = ((t / max_t + kS) / (1.0 + kS)) * kPi / 2.0;
    double c = std::cos(arg);
    return c * c;
  };
  NoiseSchedule s;
  s.max_t = max_t;
  s.alpha_bar.resize(max_t + 1);
  s.beta.resize(max_t + 1, 0.0);
  double f0 = f(0.0);
  for (int t = 0; t <= max_t; ++t) s.alpha_bar[t] = f(t) / f0;
  for (int t = 1; t <= max_t; ++t) {
    s.beta[t] = std::min(1.0 - s.alpha_bar[t] / s.alpha_bar[t - 1], 0.999);
  }
  return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps,
                const NoiseSchedule& s) {
  require(t >= 1 && t <= s.max_t, "q_sample: t out of range");
  require(x0.same_shape(eps), "q_sample: eps must match x0");
  double a = std::sqrt(s.alpha_bar[t]);
  double b = std::sqrt(1.0 - s.alpha_bar[t]);
  std::vector<double> data(x0.size());
  for (int i = 0; i < x0.size(); ++i)
    data[i] = a * x0.data()[i] + b * eps.data()[i];
  return Tensor::from_data(x0.shape(), std::move(data));
}

namespace {

// Frame-to-frame differences, [L-1 x d]; callers guard L >= 2.
Tensor frame_velocity(const Tensor& x) {
  int L = x.rows();
  return sub(slice_rows(x, 1, L - 1), slice_rows(x, 0, L - 1));
}

}  // namespace

Tensor dyadic_loss(const Tensor& pred_a, const Tensor& pred_b,
                   const Tensor& x0a, const Tensor& x0b,
                   const LossWeights& w) {
  Tensor loss = add(mse(pred_a, x0a), mse(pred_b, x0b));
  if (w.lambda_vel != 0.0 && x0a.rows() >= 2) {
    Tensor vel = add(mse(frame_velocity(pred_a), frame_velocity(x0a)),
                     mse(frame_velocity(pred_b), frame_velocity(x0b)));
    loss = add(loss, scale(vel, w.lambda_vel));
  }
  if (w.lambda_rel != 0.0) {
    // Per-frame person-a-to-person-b joint offsets.
    Tensor rel = mse(sub(pred_a, pred_b), sub(x0a, x0b));
    loss = add(loss, scale(rel, w.lambda_rel));
  }
  return loss;
}

Tensor training_loss_item(const TrainItem& item,
                          const denoiser::DenoiserParams& params,
                          const NoiseSchedule& s, const LossWeights& w) {
  Tensor xa_t = q_sample(item.x0a, item.t, item.eps_a, s);
  Tensor xb_t = q_sample(item.x0b, item.t, item.eps_b, s);
  auto pred = denoiser::denoise_step(xa_t, xb_t, item.t, s.max_t,
                                     item.text_embedding, item.mask, params);
  return dyadic_loss(pred.first, pred.second, item.x0a, item.x0b, w);
}

// ---- samplers ---------------------------------------------------------------

std::vector<int> ddim_times(int max_t, int steps) {
  require(steps >= 1, "ddim: steps must be >= 1");
  require(steps <= max_t, "ddim: steps must be <= T");
  std::vector<int> times(steps + 1);
  for (int i = 0; i <= steps; ++i) {
    times[i] = static_cast<int>(
        std::llround(static_cast<double>(i) * max_t / steps));
  }
  return times;
}

namespace {

void check_state_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) throw numeric_error("sampler: non-finite state");
  }
}

}  // namespace

SamplePair ddpm_sample_fn(int length, int d_pose, const DenoiseFn& fn,
                          const NoiseSchedule& s, Rng& rng) {
  require(length >= 1, "ddpm_sample: length must be >= 1");
  Shape shape{length, d_pose};
  Tensor xa = Tensor::from_data(
      shape, rng.gaussian_vec(static_cast<std::size_t>(length) * d_pose));
  Tensor xb = Tensor::from_data(
      shape, rng.gaussian_vec(static_cast<std::size_t>(length) * d_pose));

  for (int t = s.max_t; t >= 1; --t) {
    auto pred = fn(xa, xb, t);
    double ab_t = s.alpha_bar[t];
    double ab_prev = s.alpha_bar[t - 1];
    double beta_t = s.beta[t];
    double alpha_t = s.alpha(t);
    double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
    double ct = std::sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t);
    double sigma = std::sqrt(beta_t * (1.0 - ab_prev) / (1.0 - ab_t));

    auto update = [&](Tensor& x, const Tensor& x0_hat) {
      std::vector<double> next(x.size());
      for (int i = 0; i < x.size(); ++i)
        next[i] = c0 * x0_hat.data()[i] + ct * x.data()[i];
      if (t > 1) {
        for (double& v : next) v += sigma * rng.gaussian();
      }
      check_state_finite(next);
      x = Tensor::from_data(x.shape(), std::move(next));
    };
    // Noise draw order: all of person a's frame noise, then person b's.
    update(xa, pred.first);
    update(xb, pred.second);
  }
  return {xa, xb};
}

SamplePair ddim_sample_fn(int length, int d_pose, const DenoiseFn& fn,
                          const NoiseSchedule& s, int steps, Rng& rng) {
  require(length >= 1, "ddim_sample: length must be >= 1");
  std::vector<int> times = ddim_times(s.max_t, steps);
  Shape shape{length, d_pose};
  Tensor xa = Tensor::from_data(
      shape, rng.gaussian_vec(static_cast<std::size_t>(length) * d_pose));
  Tensor xb = Tensor::from_data(
      shape, rng.gaussian_vec(static_cast<std::size_t>(length) * d_pose));

  for (int i = steps; i >= 1; --i) {
    int t = times[i];
    int t_prev = times[i - 1];
    auto pred = fn(xa, xb, t);
    double ab_t = s.alpha_bar[t];
    double ab_prev = s.alpha_bar[t_prev];
    double sq_ab_t = std::sqrt(ab_t);
    double sq_1m_t = std::sqrt(1.0 - ab_t);
    double sq_ab_p = std::sqrt(ab_prev);
    double sq_1m_p = std::sqrt(1.0 - ab_prev);

    auto update = [&](Tensor& x, const Tensor& x0_hat) {
      std::vector<double> next(x.size());
      for (int idx = 0; idx < x.size(); ++idx) {
        // eps back-solved from (x_t, x0_hat); eta = 0 keeps it deterministic.
        double eps_hat = (x.data()[idx] - sq_ab_t * x0_hat.data()[idx]) / sq_1m_t;
        next[idx] = sq_ab_p * x0_hat.data()[idx] + sq_1m_p * eps_hat;
      }
      check_state_finite(next);
      x = Tensor::from_data(x.shape(), std::move(next));
    };
    update(xa, pred.first);
    update(xb, pred.second);
  }
  return {xa, xb};
}

namespace {

DenoiseFn model_denoise_fn(const std::optional<Tensor>& text_embedding,
                           const denoiser::DenoiserParams& p,
                           const NoiseSchedule& s, double guidance_w) {
  bool have_cond = text_embedding.has_value();
  return [&, have_cond, guidance_w](const Tensor& xa, const Tensor& xb,
                                    int t) -> std::pair<Tensor, Tensor> {
    Tensor none;
    if (!have_cond) {
      return denoiser::denoise_step(xa, xb, t, s.max_t, none, true, p);
    }
    auto cond = denoiser::denoise_step(xa, xb, t, s.max_t, *text_embedding,
                                       false, p);
    if (guidance_w == 1.0) return cond;
    auto null = denoiser::denoise_step(xa, xb, t, s.max_t, none, true, p);
    auto blend = [&](const Tensor& c, const Tensor& n) {
      std::vector<double> v(c.size());
      for (int i = 0; i < c.size(); ++i)
        v[i] = n.data()[i] + guidance_w * (c.data()[i] - n.data()[i]);
      return Tensor::from_data(c.shape(), std::move(v));
    };
    return {blend(cond.first, null.first), blend(cond.second, null.second)};
  };
}

}  // namespace

SamplePair ddpm_sample(int length, const std::optional<Tensor>& text_embedding,
                       const denoiser::DenoiserParams& p,
                       const NoiseSchedule& s, Rng& rng) {
  DenoiseFn fn = model_denoise_fn(text_embedding, p, s, 1.0);
  return ddpm_sample_fn(length, p.config.d_pose, fn, s, rng);
}

SamplePair ddim_sample(int length, const std::optional<Tensor>& text_embedding,
                       const denoiser::DenoiserParams& p,
                       const NoiseSchedule& s, int steps, double guidance_w,
                       Rng& rng) {
  DenoiseFn fn = model_denoise_fn(text_embedding, p, s, guidance_w);
  return ddim_sample_fn(length, p.config.d_pose, fn, s, steps, rng);
}

// ---- optimizer --------------------------------------------------------------

Adam::Adam(denoiser::DenoiserParams& params, AdamConfig config)
    : params_(&params), config_(config) {
  params.visit([&](const std::string&, Tensor& t) { slots_.push_back(t); });
  m_.resize(slots_.size());
  v_.resize(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    m_[i].assign(slots_[i].size(), 0.0);
    v_[i].assign(slots_[i].size(), 0.0);
  }
}

void Adam::step(const std::vector<std::vector<double>>& grads,
                double lr_scale) {
  require(grads.size() == slots_.size(), "adam: gradient slot count mismatch");
  ++step_count_;
  double b1 = config_.beta1, b2 = config_.beta2;
  double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
  double lr = config_.lr * lr_scale;
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    require(grads[i].size() == static_cast<std::size_t>(slots_[i].size()),
            "adam: gradient size mismatch");
    auto& data = slots_[i].mutable_data();
    for (std::size_t j = 0; j < grads[i].size(); ++j) {
      double g = grads[i][j];
      if (!std::isfinite(g)) throw numeric_error("adam: non-finite gradient");
      m_[i][j] = b1 * m_[i][j] + (1.0 - b1) * g;
      v_[i][j] = b2 * v_[i][j] + (1.0 - b2) * g * g;
      double mhat = m_[i][j] / bc1;
      double vhat = v_[i][j] / bc2;
      data[j] -= lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace duet::diffusion
