#include "duet/denoiser.hpp"

#include <cmath>

namespace duet::denoiser {

using detail::require;

namespace {
constexpr double kLnEps = 1e-5;
}

const char* to_string(CondMode m) {
  switch (m) {
    case CondMode::kAdaln: return "adaln";
    case CondMode::kPrepend: return "prepend";
    case CondMode::kBoth: return "both";
  }
  return "?";
}

const char* to_string(CrossMode m) {
  return m == CrossMode::kConcat ? "concat" : "add";
}

CondMode cond_mode_from_string(const std::string& s) {
  if (s == "adaln") return CondMode::kAdaln;
  if (s == "prepend") return CondMode::kPrepend;
  if (s == "both") return CondMode::kBoth;
  throw std::invalid_argument("unknown cond_mode: " + s);
}

CrossMode cross_mode_from_string(const std::string& s) {
  if (s == "concat") return CrossMode::kConcat;
  if (s == "add") return CrossMode::kAdd;
  throw std::invalid_argument("unknown cross_mode: " + s);
}

void DenoiserConfig::validate() const {
  require(n_blocks >= 1, "config: n_blocks must be >= 1");
  require(h >= 2, "config: h must be >= 2");
  require(d_pose >= 1, "config: d_pose must be >= 1");
  require(d_state >= 1 && expansion >= 1 && conv_k >= 1,
          "config: ssm dims must be positive");
  require(d_text >= 1, "config: d_text must be >= 1");
}

LinearParams LinearParams::init(int in, int out, Rng& rng) {
  LinearParams p;
  p.w = Tensor::randn({in, out}, rng, 1.0 / std::sqrt(in), true);
  p.b = Tensor::zeros({out}, true);
  return p;
}

LinearParams LinearParams::zeros(int in, int out) {
  LinearParams p;
  p.w = Tensor::zeros({in, out}, true);
  p.b = Tensor::zeros({out}, true);
  return p;
}

DenoiserParams DenoiserParams::init(const DenoiserConfig& config, Rng& rng) {
  config.validate();
  DenoiserParams p;
  p.config = config;
  int h = config.h, dc = config.d_cond();
  ssm::MambaDims dims = config.mamba_dims();

  p.input_proj = LinearParams::init(config.d_pose, h, rng);
  p.blocks.resize(config.n_blocks);
  for (auto& blk : p.blocks) {
    if (config.uses_adaln()) {
      blk.adaln_self = LinearParams::zeros(dc, 2 * h);
      blk.adaln_cross = LinearParams::zeros(dc, 2 * h);
    }
    blk.m_self = ssm::MambaModuleParams::init(dims, rng);
    blk.m_cross = ssm::MambaModuleParams::init(dims, rng);
    int mix_in = config.cross_mode == CrossMode::kConcat ? 2 * h : h;
    blk.cross_mix = LinearParams::init(mix_in, h, rng);
  }
  p.output_proj = LinearParams::init(h, config.d_pose, rng);
  p.t_mlp1 = LinearParams::init(dc, dc, rng);
  p.t_mlp2 = LinearParams::init(dc, dc, rng);
  p.text_proj = LinearParams::init(config.d_text, dc, rng);
  p.null_text_emb = Tensor::randn({dc}, rng, 0.02, true);
  return p;
}

long long DenoiserParams::param_count() {
  long long n = 0;
  visit([&](const std::string&, Tensor& t) { n += t.size(); });
  return n;
}

Tensor timestep_features(int t, int max_t, int d) {
  require(max_t >= 1, "timestep_features: max_t must be >= 1");
  require(t >= 0 && t <= max_t, "timestep_features: t out of range");
  require(d >= 2, "timestep_features: d must be >= 2");
  int half = d / 2;
  std::vector<double> feat(d, 0.0);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * i / half);
    feat[i] = std::sin(t * freq);
    feat[half + i] = std::cos(t * freq);
  }
  if (d % 2 == 1) feat[d - 1] = 0.0;
  return Tensor::from_data({d}, std::move(feat));
}

Tensor embed_timestep(int t, int max_t, const DenoiserParams& p) {
  int dc = p.config.d_cond();
  Tensor f = reshape(timestep_features(t, max_t, dc), {1, dc});
  Tensor hmid = silu(linear(f, p.t_mlp1.w, p.t_mlp1.b));
  return reshape(linear(hmid, p.t_mlp2.w, p.t_mlp2.b), {dc});
}

Tensor combine_conditioning(const Tensor& c_proj, const Tensor& t_proj) {
  require(c_proj.rank() == 1 && t_proj.rank() == 1 &&
              c_proj.size() == t_proj.size(),
          "combine_conditioning: widths must match");
  return add(c_proj, t_proj);
}

Tensor conditioning_embedding(const Tensor& text_embedding, bool mask, int t,
                              int max_t, const DenoiserParams& p) {
  Tensor t_proj = embed_timestep(t, max_t, p);
  Tensor c_proj;
  if (mask) {
    c_proj = p.null_text_emb;
  } else {
    require(text_embedding.rank() == 1 &&
                text_embedding.size() == p.config.d_text,
            "conditioning_embedding: text embedding must be [d_text]");
    Tensor row = reshape(text_embedding, {1, p.config.d_text});
    c_proj = reshape(linear(row, p.text_proj.w, p.text_proj.b),
                     {p.config.d_cond()});
  }
  return combine_conditioning(c_proj, t_proj);
}

Tensor adaln(const Tensor& x, const Tensor& emb, const LinearParams& proj) {
  require(x.rank() == 2, "adaln: x must be [L x h]");
  int h = x.cols();
  require(emb.rank() == 1 && proj.w.rows() == emb.size() &&
              proj.w.cols() == 2 * h,
          "adaln: projection must map emb to 2h");
  Tensor mod = linear(reshape(emb, {1, emb.size()}), proj.w, proj.b);
  Tensor scale_v = reshape(slice_cols(mod, 0, h), {h});
  Tensor shift_v = reshape(slice_cols(mod, h, h), {h});
  Tensor gain = add(Tensor::full({h}, 1.0), scale_v);
  return add_rowvec(mul_rowvec(layernorm_nogain(x, kLnEps), gain), shift_v);
}

namespace {

// Conditioning around one mamba module. Every module sees a pre-normalized
// signal: AdaLN when the config modulates, plain layernorm otherwise (the
// unnormalized stack blows up under the multiplicative gating). The prepended
// conditioning frame enters unnormalized and is stripped after the module.
Tensor conditioned_module(const Tensor& x, const Tensor& emb,
                          const ssm::MambaModuleParams& m,
                          const LinearParams& adaln_proj,
                          const DenoiserConfig& config) {
  Tensor cur = config.uses_adaln() ? adaln(x, emb, adaln_proj)
                                   : layernorm_nogain(x, kLnEps);
  if (config.uses_prepend()) {
    cur = concat_rows(reshape(emb, {1, emb.size()}), cur);
  }
  Tensor y = ssm::mamba_module(cur, m);
  if (config.uses_prepend()) y = slice_rows(y, 1, x.rows());
  return y;
}

}  // namespace

std::pair<Tensor, Tensor> cooperative_block(const Tensor& xa, const Tensor& xb,
                                            const Tensor& emb,
                                            const CoopBlockParams& p,
                                            const DenoiserConfig& config) {
  require(xa.rank() == 2 && xa.same_shape(xb),
          "cooperative_block: person streams must share a shape");
  Tensor sa = conditioned_module(xa, emb, p.m_self, p.adaln_self, config);
  Tensor sb = conditioned_module(xb, emb, p.m_self, p.adaln_self, config);

  Tensor mixed_a, mixed_b;
  if (config.cross_mode == CrossMode::kConcat) {
    mixed_a = linear(concat_lastdim(sa, sb), p.cross_mix.w, p.cross_mix.b);
    mixed_b = linear(concat_lastdim(sb, sa), p.cross_mix.w, p.cross_mix.b);
  } else {
    // Addition is order-invariant, so both persons see the same merged signal.
    Tensor merged = linear(add(sa, sb), p.cross_mix.w, p.cross_mix.b);
    mixed_a = merged;
    mixed_b = merged;
  }

  // Residual around the cross stage keeps the two streams distinct even in
  // add mode, where the cross outputs are identical for both persons.
  Tensor ca = conditioned_module(mixed_a, emb, p.m_cross, p.adaln_cross, config);
  Tensor cb = config.cross_mode == CrossMode::kAdd
                  ? ca
                  : conditioned_module(mixed_b, emb, p.m_cross, p.adaln_cross,
                                       config);
  return {add(sa, ca), add(sb, cb)};
}

std::pair<Tensor, Tensor> denoise_step(const Tensor& xa_t, const Tensor& xb_t,
                                       int t, int max_t,
                                       const Tensor& text_embedding, bool mask,
                                       const DenoiserParams& p) {
  require(t >= 1 && t <= max_t, "denoise_step: t out of range");
  require(xa_t.rank() == 2 && xa_t.same_shape(xb_t),
          "denoise_step: person signals must share a shape");
  require(xa_t.cols() == p.config.d_pose,
          "denoise_step: pose width must match the config");

  Tensor emb = conditioning_embedding(text_embedding, mask, t, max_t, p);
  Tensor ha = linear(xa_t, p.input_proj.w, p.input_proj.b);
  Tensor hb = linear(xb_t, p.input_proj.w, p.input_proj.b);
  for (const CoopBlockParams& blk : p.blocks) {
    auto out = cooperative_block(ha, hb, emb, blk, p.config);
    ha = out.first;
    hb = out.second;
  }
  return {linear(ha, p.output_proj.w, p.output_proj.b),
          linear(hb, p.output_proj.w, p.output_proj.b)};
}

}  // namespace duet::denoiser
