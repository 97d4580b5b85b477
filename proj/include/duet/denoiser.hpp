#pragma once

// The dyadic denoising network: N cooperative blocks perform single-step
// denoising of a t-noised two-person signal conditioned on a text embedding
// and the diffusion step. Each block runs a shared-weight self module per
// person, then exchanges information through a cross module fed a merged
// two-person signal. Both persons always share one weight set, which makes the
// network exactly equivariant to swapping the persons.

#include <string>
#include <utility>
#include <vector>

#include "duet/rng.hpp"
#include "duet/ssm.hpp"
#include "duet/tensor.hpp"

namespace duet::denoiser {

enum class CondMode { kAdaln, kPrepend, kBoth };
enum class CrossMode { kConcat, kAdd };

const char* to_string(CondMode m);
const char* to_string(CrossMode m);
CondMode cond_mode_from_string(const std::string& s);
CrossMode cross_mode_from_string(const std::string& s);

struct DenoiserConfig {
  int n_blocks = 4;
  int h = 64;  // latent width; the conditioning embedding shares it
  int d_pose = 15;
  int d_state = 16;
  int expansion = 2;
  int conv_k = 4;
  int d_text = 256;
  CondMode cond_mode = CondMode::kAdaln;
  CrossMode cross_mode = CrossMode::kConcat;

  int d_cond() const { return h; }
  bool uses_adaln() const { return cond_mode != CondMode::kPrepend; }
  bool uses_prepend() const { return cond_mode != CondMode::kAdaln; }
  ssm::MambaDims mamba_dims() const {
    return ssm::MambaDims::make(h, d_state, expansion, conv_k);
  }
  void validate() const;
};

struct LinearParams {
  Tensor w;  // [in x out]
  Tensor b;  // [out]

  static LinearParams init(int in, int out, Rng& rng);
  static LinearParams zeros(int in, int out);

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + ".w", w);
    fn(prefix + ".b", b);
  }
};

struct CoopBlockParams {
  // AdaLN projections (emb -> scale,shift), zero-initialized so every block
  // starts as identity modulation. Absent in prepend-only conditioning.
  LinearParams adaln_self;
  LinearParams adaln_cross;
  ssm::MambaModuleParams m_self;
  ssm::MambaModuleParams m_cross;
  // Merge projection for the cross stage: [2h x h] for concat,
  // [h x h] for add (the parameter-count equalizer).
  LinearParams cross_mix;

  template <typename Fn>
  void visit(const std::string& prefix, bool with_adaln, Fn&& fn) {
    if (with_adaln) {
      adaln_self.visit(prefix + "adaln_self", fn);
      adaln_cross.visit(prefix + "adaln_cross", fn);
    }
    m_self.visit(prefix + "m_self.", fn);
    m_cross.visit(prefix + "m_cross.", fn);
    cross_mix.visit(prefix + "cross_mix", fn);
  }
};

struct DenoiserParams {
  DenoiserConfig config;
  LinearParams input_proj;   // [d_pose x h]
  std::vector<CoopBlockParams> blocks;
  LinearParams output_proj;  // [h x d_pose]
  // Conditioning: sinusoidal step features -> 2-layer silu MLP; text embedding
  // -> linear projection; learned null embedding substituted when masked.
  LinearParams t_mlp1;
  LinearParams t_mlp2;
  LinearParams text_proj;  // [d_text x d_cond]
  Tensor null_text_emb;    // [d_cond]

  static DenoiserParams init(const DenoiserConfig& config, Rng& rng);

  template <typename Fn>
  void visit(Fn&& fn) {
    input_proj.visit("input_proj", fn);
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      blocks[i].visit("blocks." + std::to_string(i) + ".",
                      config.uses_adaln(), fn);
    }
    output_proj.visit("output_proj", fn);
    t_mlp1.visit("t_mlp1", fn);
    t_mlp2.visit("t_mlp2", fn);
    text_proj.visit("text_proj", fn);
    fn(std::string("null_text_emb"), null_text_emb);
  }

  long long param_count();
};

// Sinusoidal features of the diffusion step, constant w.r.t. parameters.
Tensor timestep_features(int t, int max_t, int d);

// Features followed by the 2-layer MLP; deterministic in (t, params).
Tensor embed_timestep(int t, int max_t, const DenoiserParams& p);

// emb = c_proj + t_proj. The caller picks c_proj (projected text or the
// learned null embedding when masked).
Tensor combine_conditioning(const Tensor& c_proj, const Tensor& t_proj);

// Full conditioning path. text_embedding: [d_text]; empty prompt handling is
// the caller's job (pass mask=true).
Tensor conditioning_embedding(const Tensor& text_embedding, bool mask, int t,
                              int max_t, const DenoiserParams& p);

// layernorm_nogain(x) * (1 + scale(emb)) + shift(emb), broadcast over frames.
Tensor adaln(const Tensor& x, const Tensor& emb, const LinearParams& proj);

// One cooperative block. Inputs and outputs are [L x h] per person.
std::pair<Tensor, Tensor> cooperative_block(const Tensor& xa, const Tensor& xb,
                                            const Tensor& emb,
                                            const CoopBlockParams& p,
                                            const DenoiserConfig& config);

// Predicts the clean signal (x0) for both persons from the t-noised pair.
std::pair<Tensor, Tensor> denoise_step(const Tensor& xa_t, const Tensor& xb_t,
                                       int t, int max_t,
                                       const Tensor& text_embedding, bool mask,
                                       const DenoiserParams& p);

}  // namespace duet::denoiser
