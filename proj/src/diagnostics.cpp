#include "duet/diagnostics.hpp"

#include <cmath>

#include "duet/denoiser.hpp"
#include "duet/diffusion.hpp"
#include "duet/rng.hpp"
#include "duet/ssm.hpp"
#include "duet/tensor.hpp"

namespace duet::diagnostics {

namespace {

constexpr double kGradTol = 1e-4;
constexpr double kOracleTol = 1e-10;

// Random-weighted sum as the probe functional. A plain sum() sends the same
// output-gradient into every row, which the centering inside the layernorm
// backward cancels to first order, leaving finite differencing nothing but
// roundoff to measure.
Tensor probe_sum(const Tensor& out, const Tensor& weights) {
  return sum(mul(out, weights));
}

struct ScanInstance {
  Tensor u, dt, A, B, C, D;
  int L, d, n;
};

ScanInstance make_scan(Rng& rng, int L, int d, int n, bool rg) {
  ScanInstance s;
  s.L = L;
  s.d = d;
  s.n = n;
  s.u = Tensor::randn({L, d}, rng, 1.0, rg);
  std::vector<double> dt(static_cast<std::size_t>(L) * d);
  for (auto& v : dt) v = 0.01 + 0.2 * rng.uniform();
  s.dt = Tensor::from_data({L, d}, std::move(dt), rg);
  std::vector<double> a(static_cast<std::size_t>(d) * n);
  for (auto& v : a) v = -0.1 - 2.0 * rng.uniform();
  s.A = Tensor::from_data({d, n}, std::move(a), rg);
  s.B = Tensor::randn({L, n}, rng, 1.0, rg);
  s.C = Tensor::randn({L, n}, rng, 1.0, rg);
  s.D = Tensor::randn({d}, rng, 1.0, rg);
  return s;
}

// Brute-force unrolled recurrence, independent of the ssm implementation.
std::vector<double> unrolled_scan(const ScanInstance& s) {
  std::vector<double> h(static_cast<std::size_t>(s.d) * s.n, 0.0);
  std::vector<double> y(static_cast<std::size_t>(s.L) * s.d, 0.0);
  for (int i = 0; i < s.L; ++i) {
    for (int c = 0; c < s.d; ++c) {
      double acc = 0.0;
      double dt = s.dt.at(i, c);
      for (int k = 0; k < s.n; ++k) {
        double abar = std::exp(dt * s.A.at(c, k));
        h[c * s.n + k] = abar * h[c * s.n + k] + dt * s.B.at(i, k) * s.u.at(i, c);
        acc += s.C.at(i, k) * h[c * s.n + k];
      }
      y[i * s.d + c] = acc + s.D.at(c) * s.u.at(i, c);
    }
  }
  return y;
}

using CheckFn = double (*)(Rng&);

double check_matmul(Rng& rng) {
  Tensor a = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor b = Tensor::randn({5, 3}, rng, 1.0, true);
  std::vector<Tensor> leaves{a, b};
  return grad_check([&] { return sum(matmul(a, b)); }, leaves);
}

double check_linear(Rng& rng) {
  Tensor x = Tensor::randn({4, 5}, rng, 1.0, true);
  Tensor w = Tensor::randn({5, 3}, rng, 1.0, true);
  Tensor b = Tensor::randn({3}, rng, 1.0, true);
  std::vector<Tensor> leaves{x, w, b};
  return grad_check([&] { return sum(silu(linear(x, w, b))); }, leaves);
}

double check_elementwise(Rng& rng) {
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  Tensor b = Tensor::randn({3, 4}, rng, 1.0, true);
  std::vector<Tensor> leaves{a, b};
  double worst = 0.0;
  worst = std::max(worst, grad_check([&] { return sum(add(a, b)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(sub(a, b)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(mul(a, b)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(neg(a)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(scale(a, 1.7)); }, leaves));
  worst = std::max(worst, grad_check([&] { return mse(a, b); }, leaves));
  worst = std::max(worst, grad_check([&] { return mean(mul(a, b)); }, leaves));
  return worst;
}

double check_activations(Rng& rng) {
  Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
  std::vector<Tensor> leaves{a};
  double worst = 0.0;
  worst = std::max(worst, grad_check([&] { return sum(silu(a)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(sigmoid(a)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(softplus(a)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(exp(a)); }, leaves));
  return worst;
}

double check_rowvec(Rng& rng) {
  Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor v = Tensor::randn({3}, rng, 1.0, true);
  std::vector<Tensor> leaves{x, v};
  double worst = 0.0;
  worst = std::max(worst, grad_check([&] { return sum(add_rowvec(x, v)); }, leaves));
  worst = std::max(worst, grad_check([&] { return sum(mul_rowvec(x, v)); }, leaves));
  return worst;
}

double check_shape_ops(Rng& rng) {
  Tensor a = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
  std::vector<Tensor> leaves{a, b};
  double worst = 0.0;
  worst = std::max(worst, grad_check(
      [&] { return sum(silu(concat_lastdim(a, b))); }, leaves));
  worst = std::max(worst, grad_check(
      [&] { return sum(mul(slice_cols(concat_lastdim(a, b), 1, 2),
                           slice_cols(concat_lastdim(a, b), 2, 2))); },
      leaves));
  Tensor c = Tensor::randn({2, 3}, rng, 1.0, true);
  std::vector<Tensor> l2{a, c};
  worst = std::max(worst, grad_check(
      [&] { return sum(silu(concat_rows(a, c))); }, l2));
  worst = std::max(worst, grad_check(
      [&] { return sum(slice_rows(a, 1, 2)); }, l2));
  worst = std::max(worst, grad_check(
      [&] { return sum(mul(reshape(a, {3, 4}), reshape(a, {3, 4}))); }, l2));
  return worst;
}

double check_layernorm(Rng& rng) {
  Tensor x = Tensor::randn({4, 6}, rng, 2.0, true);
  Tensor w = Tensor::randn({4, 6}, rng);
  std::vector<Tensor> leaves{x};
  return grad_check(
      [&] { return probe_sum(layernorm_nogain(x, 1e-5), w); }, leaves);
}

double check_conv(Rng& rng) {
  Tensor x = Tensor::randn({8, 3}, rng, 1.0, true);
  Tensor k = Tensor::randn({4, 3}, rng, 1.0, true);
  std::vector<Tensor> leaves{x, k};
  return grad_check([&] { return sum(silu(depthwise_conv1d(x, k))); }, leaves);
}

double check_scan(Rng& rng) {
  ScanInstance s = make_scan(rng, 8, 3, 2, true);
  std::vector<Tensor> leaves{s.u, s.dt, s.A, s.B, s.C, s.D};
  return grad_check(
      [&] { return sum(ssm::selective_scan(s.u, s.dt, s.A, s.B, s.C, s.D)); },
      leaves);
}

double check_mamba_block(Rng& rng) {
  ssm::MambaDims dims = ssm::MambaDims::make(4, 2, 2, 3);
  ssm::MambaBlockParams p = ssm::MambaBlockParams::init(dims, rng);
  Tensor x = Tensor::randn({6, 4}, rng, 1.0, true);
  std::vector<Tensor> leaves{x};
  p.visit("", [&](const std::string&, Tensor& t) { leaves.push_back(t); });
  return grad_check([&] { return sum(ssm::mamba_block(x, p)); }, leaves);
}

double check_mamba_module(Rng& rng) {
  ssm::MambaDims dims = ssm::MambaDims::make(4, 2, 2, 3);
  ssm::MambaModuleParams m = ssm::MambaModuleParams::init(dims, rng);
  Tensor x = Tensor::randn({5, 4}, rng, 1.0, true);
  Tensor w = Tensor::randn({5, 4}, rng);
  std::vector<Tensor> leaves{x};
  m.visit("", [&](const std::string&, Tensor& t) { leaves.push_back(t); });
  return grad_check([&] { return probe_sum(ssm::mamba_module(x, m), w); },
                    leaves);
}

double check_adaln(Rng& rng) {
  denoiser::LinearParams proj = denoiser::LinearParams::init(4, 12, rng);
  Tensor x = Tensor::randn({5, 6}, rng, 1.0, true);
  Tensor emb = Tensor::randn({4}, rng, 1.0, true);
  Tensor w = Tensor::randn({5, 6}, rng);
  std::vector<Tensor> leaves{x, emb, proj.w, proj.b};
  return grad_check([&] { return probe_sum(denoiser::adaln(x, emb, proj), w); },
                    leaves);
}

double check_timestep_mlp(Rng& rng) {
  denoiser::DenoiserConfig cfg;
  cfg.n_blocks = 1;
  cfg.h = 8;
  cfg.d_pose = 4;
  cfg.d_state = 2;
  cfg.d_text = 5;
  denoiser::DenoiserParams p = denoiser::DenoiserParams::init(cfg, rng);
  int t = 1 + rng.uniform_int(90);
  std::vector<Tensor> leaves{p.t_mlp1.w, p.t_mlp1.b, p.t_mlp2.w, p.t_mlp2.b};
  return grad_check([&] { return sum(denoiser::embed_timestep(t, 100, p)); },
                    leaves);
}

denoiser::DenoiserParams jittered_tiny_denoiser(Rng& rng,
                                                denoiser::CrossMode cross,
                                                denoiser::CondMode cond) {
  denoiser::DenoiserConfig cfg;
  cfg.n_blocks = 1;
  cfg.h = 4;
  cfg.d_pose = 5;
  cfg.d_state = 2;
  cfg.conv_k = 2;
  cfg.d_text = 3;
  cfg.cross_mode = cross;
  cfg.cond_mode = cond;
  denoiser::DenoiserParams p = denoiser::DenoiserParams::init(cfg, rng);
  // Probe gradients at a generic point; zero-initialized AdaLN projections
  // would otherwise leave whole paths inactive.
  p.visit([&](const std::string&, Tensor& t) {
    for (auto& v : t.mutable_data()) v += 0.15 * rng.gaussian();
  });
  return p;
}

double check_coop_block(Rng& rng, denoiser::CrossMode cross) {
  denoiser::DenoiserParams p =
      jittered_tiny_denoiser(rng, cross, denoiser::CondMode::kAdaln);
  const auto& cfg = p.config;
  Tensor xa = Tensor::randn({6, cfg.h}, rng, 1.0, true);
  Tensor xb = Tensor::randn({6, cfg.h}, rng, 1.0, true);
  Tensor emb = Tensor::randn({cfg.d_cond()}, rng, 1.0, true);
  Tensor wa = Tensor::randn({6, cfg.h}, rng);
  Tensor wb = Tensor::randn({6, cfg.h}, rng);
  std::vector<Tensor> leaves{xa, xb, emb};
  p.blocks[0].visit("", cfg.uses_adaln(),
                    [&](const std::string&, Tensor& t) { leaves.push_back(t); });
  return grad_check(
      [&] {
        auto out = denoiser::cooperative_block(xa, xb, emb, p.blocks[0], cfg);
        return add(probe_sum(out.first, wa), probe_sum(out.second, wb));
      },
      leaves);
}

double check_coop_concat(Rng& rng) {
  return check_coop_block(rng, denoiser::CrossMode::kConcat);
}

double check_coop_add(Rng& rng) {
  return check_coop_block(rng, denoiser::CrossMode::kAdd);
}

double check_denoise_step(Rng& rng) {
  denoiser::DenoiserParams p = jittered_tiny_denoiser(
      rng, denoiser::CrossMode::kConcat, denoiser::CondMode::kBoth);
  const auto& cfg = p.config;
  Tensor c = Tensor::randn({cfg.d_text}, rng);
  Tensor xa = Tensor::randn({8, cfg.d_pose}, rng, 1.0, true);
  Tensor xb = Tensor::randn({8, cfg.d_pose}, rng, 1.0, true);
  Tensor wa = Tensor::randn({8, cfg.d_pose}, rng);
  Tensor wb = Tensor::randn({8, cfg.d_pose}, rng);
  std::vector<Tensor> leaves{xa, xb};
  p.visit([&](const std::string&, Tensor& t) { leaves.push_back(t); });
  return grad_check(
      [&] {
        auto out = denoiser::denoise_step(xa, xb, 3, 7, c, false, p);
        return add(probe_sum(out.first, wa), probe_sum(out.second, wb));
      },
      leaves);
}

double check_training_loss(Rng& rng) {
  denoiser::DenoiserParams p = jittered_tiny_denoiser(
      rng, denoiser::CrossMode::kConcat, denoiser::CondMode::kAdaln);
  const auto& cfg = p.config;
  diffusion::NoiseSchedule s = diffusion::build_schedule(10);
  diffusion::TrainItem item;
  item.x0a = Tensor::randn({6, cfg.d_pose}, rng);
  item.x0b = Tensor::randn({6, cfg.d_pose}, rng);
  item.text_embedding = Tensor::randn({cfg.d_text}, rng);
  item.t = 1 + rng.uniform_int(10);
  item.eps_a = Tensor::randn({6, cfg.d_pose}, rng);
  item.eps_b = Tensor::randn({6, cfg.d_pose}, rng);
  diffusion::LossWeights w;
  std::vector<Tensor> leaves;
  p.visit([&](const std::string&, Tensor& t) { leaves.push_back(t); });
  return grad_check(
      [&] { return diffusion::training_loss_item(item, p, s, w); }, leaves);
}

struct NamedCheck {
  const char* name;
  CheckFn fn;
};

const NamedCheck kGradChecks[] = {
    {"matmul", check_matmul},
    {"linear", check_linear},
    {"elementwise", check_elementwise},
    {"activations", check_activations},
    {"rowvec_broadcast", check_rowvec},
    {"shape_ops", check_shape_ops},
    {"layernorm_nogain", check_layernorm},
    {"depthwise_conv1d", check_conv},
    {"selective_scan", check_scan},
    {"mamba_block", check_mamba_block},
    {"mamba_module", check_mamba_module},
    {"adaln", check_adaln},
    {"embed_timestep", check_timestep_mlp},
    {"cooperative_block.concat", check_coop_concat},
    {"cooperative_block.add", check_coop_add},
    {"denoise_step", check_denoise_step},
    {"training_loss", check_training_loss},
};

}  // namespace

std::vector<CheckResult> gradient_suite(int seeds) {
  std::vector<CheckResult> results;
  for (const NamedCheck& check : kGradChecks) {
    CheckResult r;
    r.name = check.name;
    r.threshold = kGradTol;
    for (int s = 0; s < seeds; ++s) {
      Rng rng = Rng::substream(0xD1A6u, check.name, static_cast<std::uint64_t>(s));
      r.value = std::max(r.value, check.fn(rng));
    }
    r.pass = r.value < r.threshold;
    results.push_back(std::move(r));
  }
  return results;
}

std::vector<CheckResult> scan_oracle_suite(int seeds) {
  std::vector<CheckResult> results;

  CheckResult oracle;
  oracle.name = "selective_scan.vs_unrolled";
  oracle.threshold = kOracleTol;
  CheckResult chunked;
  chunked.name = "selective_scan.chunked_equivalence";
  chunked.threshold = kOracleTol;

  for (int s = 0; s < seeds; ++s) {
    Rng rng = Rng::substream(0x5CA11u, "scan_oracle", static_cast<std::uint64_t>(s));
    int L = 2 + rng.uniform_int(63);  // L <= 64
    int d = 1 + rng.uniform_int(6);
    int n = 1 + rng.uniform_int(5);
    ScanInstance inst = make_scan(rng, L, d, n, false);

    Tensor full = ssm::selective_scan(inst.u, inst.dt, inst.A, inst.B, inst.C,
                                      inst.D);
    std::vector<double> brute = unrolled_scan(inst);
    for (int i = 0; i < full.size(); ++i)
      oracle.value = std::max(oracle.value, std::abs(full.data()[i] - brute[i]));

    for (int chunk : {1, 3, 7, L}) {
      Tensor y = ssm::selective_scan_chunked(inst.u, inst.dt, inst.A, inst.B,
                                             inst.C, inst.D, chunk);
      for (int i = 0; i < y.size(); ++i)
        chunked.value =
            std::max(chunked.value, std::abs(y.data()[i] - full.data()[i]));
    }
  }
  oracle.pass = oracle.value < oracle.threshold;
  chunked.pass = chunked.value < chunked.threshold;
  results.push_back(std::move(oracle));
  results.push_back(std::move(chunked));
  return results;
}

bool all_pass(const std::vector<CheckResult>& results) {
  for (const CheckResult& r : results) {
    if (!r.pass) return false;
  }
  return true;
}

}  // namespace duet::diagnostics
