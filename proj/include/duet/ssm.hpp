#pragma once

// Selective state-space sequence block: input-dependent discretized linear
// recurrence with gating, as a differentiable arbitrary-length seq-to-seq map.
// No positional table anywhere; every op accepts any L >= 1.

#include <string>

#include "duet/rng.hpp"
#include "duet/tensor.hpp"

namespace duet::ssm {

struct MambaDims {
  int h = 0;        // model width
  int d_inner = 0;  // expansion * h
  int d_state = 0;
  int d_dt = 0;     // low-rank width of the delta projection
  int conv_k = 0;

  static MambaDims make(int h, int d_state, int expansion, int conv_k) {
    MambaDims d;
    d.h = h;
    d.d_inner = expansion * h;
    d.d_state = d_state;
    d.d_dt = std::max(1, (h + 15) / 16);
    d.conv_k = conv_k;
    return d;
  }
};

struct MambaBlockParams {
  MambaDims dims;
  Tensor in_proj;   // [h x 2*d_inner] -> (stream, gate)
  Tensor conv;      // [conv_k x d_inner], causal
  Tensor x_proj;    // [d_inner x (d_dt + 2*d_state)] -> (dt_low, B, C)
  Tensor dt_proj;   // [d_dt x d_inner]
  Tensor dt_bias;   // [d_inner]; delta = softplus(dt_low . dt_proj + dt_bias)
  Tensor a_log;     // [d_inner x d_state]; A = -exp(a_log), strictly negative
  Tensor d_skip;    // [d_inner]
  Tensor out_proj;  // [d_inner x h]

  static MambaBlockParams init(const MambaDims& dims, Rng& rng);

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "in_proj", in_proj);
    fn(prefix + "conv", conv);
    fn(prefix + "x_proj", x_proj);
    fn(prefix + "dt_proj", dt_proj);
    fn(prefix + "dt_bias", dt_bias);
    fn(prefix + "a_log", a_log);
    fn(prefix + "d_skip", d_skip);
    fn(prefix + "out_proj", out_proj);
  }
};

// Residual stack of two blocks: y = r + block2(r), r = x + block1(x).
struct MambaModuleParams {
  MambaBlockParams block1;
  MambaBlockParams block2;

  static MambaModuleParams init(const MambaDims& dims, Rng& rng);

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    block1.visit(prefix + "b1.", fn);
    block2.visit(prefix + "b2.", fn);
  }
};

// Discretized recurrence, per channel c and state s:
//   Abar_i = exp(delta_i[c] * A[c,s]);  Bbar_i = delta_i[c] * B_i[s]
//   h_i = Abar_i * h_{i-1} + Bbar_i * u_i[c],  h_{-1} = 0
//   y_i[c] = sum_s C_i[s] * h_i[c,s] + D[c] * u_i[c]
// u, delta: [L x d_inner]; A: [d_inner x d_state]; B, C: [L x d_state];
// D: [d_inner]. delta must be strictly positive.
Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A,
                      const Tensor& B, const Tensor& C, const Tensor& D);

// Same recurrence computed in chunks with the hidden state carried across
// chunk boundaries; equals selective_scan for any chunk >= 1. chunk = 1 is
// the O(1)-state streaming form.
Tensor selective_scan_chunked(const Tensor& u, const Tensor& delta,
                              const Tensor& A, const Tensor& B,
                              const Tensor& C, const Tensor& D, int chunk);

// in_proj -> split(stream, gate) -> causal conv -> silu -> (delta, B, C)
// -> selective_scan -> * silu(gate) -> out_proj. Shape-preserving and causal.
Tensor mamba_block(const Tensor& x, const MambaBlockParams& p);

Tensor mamba_module(const Tensor& x, const MambaModuleParams& p);

}  // namespace duet::ssm
