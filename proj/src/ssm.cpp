#include "duet/ssm.hpp"

#include <cmath>

namespace duet::ssm {

using detail::require;

MambaBlockParams MambaBlockParams::init(const MambaDims& dims, Rng& rng) {
  MambaBlockParams p;
  p.dims = dims;
  int h = dims.h, di = dims.d_inner, n = dims.d_state, dk = dims.d_dt;
  p.in_proj = Tensor::randn({h, 2 * di}, rng, 1.0 / std::sqrt(h), true);
  p.conv = Tensor::randn({dims.conv_k, di}, rng, 1.0 / std::sqrt(dims.conv_k),
                         true);
  p.x_proj = Tensor::randn({di, dk + 2 * n}, rng, 1.0 / std::sqrt(di), true);
  p.dt_proj = Tensor::randn({dk, di}, rng, 1.0 / std::sqrt(dk), true);
  // dt_bias set so softplus(dt_bias) lands in [1e-3, 1e-1].
  {
    std::vector<double> b(di);
    for (int c = 0; c < di; ++c) {
      double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
      b[c] = dt + std::log(-std::expm1(-dt));  // inverse softplus
    }
    p.dt_bias = Tensor::from_data({di}, std::move(b), true);
  }
  // A = -exp(a_log) with a_log[c,s] = log(1 + s): real S4D ladder per channel.
  {
    std::vector<double> a(static_cast<std::size_t>(di) * n);
    for (int c = 0; c < di; ++c)
      for (int s = 0; s < n; ++s) a[c * n + s] = std::log(1.0 + s);
    p.a_log = Tensor::from_data({di, n}, std::move(a), true);
  }
  p.d_skip = Tensor::full({di}, 1.0, true);
  p.out_proj = Tensor::randn({di, h}, rng, 1.0 / std::sqrt(di), true);
  return p;
}

MambaModuleParams MambaModuleParams::init(const MambaDims& dims, Rng& rng) {
  MambaModuleParams m;
  m.block1 = MambaBlockParams::init(dims, rng);
  m.block2 = MambaBlockParams::init(dims, rng);
  return m;
}

namespace {

void check_scan_shapes(const Tensor& u, const Tensor& delta, const Tensor& A,
                       const Tensor& B, const Tensor& C, const Tensor& D) {
  require(u.rank() == 2 && delta.rank() == 2 && A.rank() == 2 &&
              B.rank() == 2 && C.rank() == 2 && D.rank() == 1,
          "selective_scan: bad operand ranks");
  int L = u.rows(), d = u.cols(), n = A.cols();
  require(delta.rows() == L && delta.cols() == d,
          "selective_scan: delta must match u");
  require(A.rows() == d, "selective_scan: A must be [d_inner x d_state]");
  require(B.rows() == L && B.cols() == n && C.rows() == L && C.cols() == n,
          "selective_scan: B and C must be [L x d_state]");
  require(D.size() == d, "selective_scan: D must be [d_inner]");
  for (double v : delta.data())
    require(v > 0.0, "selective_scan: delta must be strictly positive");
}

}  // namespace

Tensor selective_scan_chunked(const Tensor& u, const Tensor& delta,
                              const Tensor& A, const Tensor& B,
                              const Tensor& C, const Tensor& D, int chunk) {
  check_scan_shapes(u, delta, A, B, C, D);
  require(chunk >= 1, "selective_scan: chunk must be >= 1");
  const int L = u.rows(), d = u.cols(), n = A.cols();

  const double* pu = u.data().data();
  const double* pdt = delta.data().data();
  const double* pA = A.data().data();
  const double* pB = B.data().data();
  const double* pC = C.data().data();
  const double* pD = D.data().data();

  std::vector<double> y(static_cast<std::size_t>(L) * d, 0.0);
  // Hidden states after each step, kept for the backward pass.
  std::vector<double> hs(static_cast<std::size_t>(L) * d * n, 0.0);

  for (int start = 0; start < L; start += chunk) {
    int stop = std::min(L, start + chunk);
    for (int i = start; i < stop; ++i) {
      const double* hprev = i > 0 ? hs.data() + static_cast<std::size_t>(i - 1) * d * n
                                  : nullptr;
      double* hcur = hs.data() + static_cast<std::size_t>(i) * d * n;
      const double* Bi = pB + static_cast<std::size_t>(i) * n;
      const double* Ci = pC + static_cast<std::size_t>(i) * n;
      for (int c = 0; c < d; ++c) {
        double dt = pdt[static_cast<std::size_t>(i) * d + c];
        double uic = pu[static_cast<std::size_t>(i) * d + c];
        const double* Ac = pA + static_cast<std::size_t>(c) * n;
        double* hc = hcur + static_cast<std::size_t>(c) * n;
        const double* hp = hprev ? hprev + static_cast<std::size_t>(c) * n : nullptr;
        double acc = 0.0;
        for (int s = 0; s < n; ++s) {
          double abar = std::exp(dt * Ac[s]);
          double hv = dt * Bi[s] * uic;
          if (hp) hv += abar * hp[s];
          hc[s] = hv;
          acc += Ci[s] * hv;
        }
        y[static_cast<std::size_t>(i) * d + c] = acc + pD[c] * uic;
      }
    }
  }

  detail::check_finite(y, "selective_scan");
  bool rec = GradTape::active() != nullptr &&
             (u.requires_grad() || delta.requires_grad() ||
              A.requires_grad() || B.requires_grad() || C.requires_grad() ||
              D.requires_grad());
  Tensor out = Tensor::from_data({L, d}, std::move(y), rec);
  if (rec) {
    Tensor u_c = u, dt_c = delta, A_c = A, B_c = B, C_c = C, D_c = D, o = out;
    auto saved_h = std::make_shared<std::vector<double>>(std::move(hs));
    GradTape::active()->record(
        "selective_scan", {&u, &delta, &A, &B, &C, &D}, out,
        [u_c, dt_c, A_c, B_c, C_c, D_c, o, saved_h, L, d, n](GradTape& t) {
          auto go = t.grad(o);
          const double* pu = u_c.data().data();
          const double* pdt = dt_c.data().data();
          const double* pA = A_c.data().data();
          const double* pB = B_c.data().data();
          const double* pC = C_c.data().data();
          const double* pD = D_c.data().data();
          const double* hs = saved_h->data();

          std::vector<double>* gu =
              u_c.requires_grad() ? &t.grad_acc(u_c) : nullptr;
          std::vector<double>* gdt =
              dt_c.requires_grad() ? &t.grad_acc(dt_c) : nullptr;
          std::vector<double>* gA =
              A_c.requires_grad() ? &t.grad_acc(A_c) : nullptr;
          std::vector<double>* gB =
              B_c.requires_grad() ? &t.grad_acc(B_c) : nullptr;
          std::vector<double>* gC =
              C_c.requires_grad() ? &t.grad_acc(C_c) : nullptr;
          std::vector<double>* gD =
              D_c.requires_grad() ? &t.grad_acc(D_c) : nullptr;

          // carry[c,s] = Abar_{i+1}[c,s] * ghat_{i+1}[c,s]
          std::vector<double> carry(static_cast<std::size_t>(d) * n, 0.0);
          for (int i = L - 1; i >= 0; --i) {
            const double* Bi = pB + static_cast<std::size_t>(i) * n;
            const double* Ci = pC + static_cast<std::size_t>(i) * n;
            const double* hcur = hs + static_cast<std::size_t>(i) * d * n;
            const double* hprev =
                i > 0 ? hs + static_cast<std::size_t>(i - 1) * d * n : nullptr;
            for (int c = 0; c < d; ++c) {
              double dt = pdt[static_cast<std::size_t>(i) * d + c];
              double uic = pu[static_cast<std::size_t>(i) * d + c];
              double gy = go[static_cast<std::size_t>(i) * d + c];
              const double* Ac = pA + static_cast<std::size_t>(c) * n;
              const double* hc = hcur + static_cast<std::size_t>(c) * n;
              const double* hp =
                  hprev ? hprev + static_cast<std::size_t>(c) * n : nullptr;
              double* cr = carry.data() + static_cast<std::size_t>(c) * n;
              double gu_acc = pD[c] * gy;
              double gdt_acc = 0.0;
              if (gD) (*gD)[c] += gy * uic;
              for (int s = 0; s < n; ++s) {
                double hv = hc[s];
                if (gC) (*gC)[static_cast<std::size_t>(i) * n + s] += gy * hv;
                double ghat = gy * Ci[s] + cr[s];
                double abar = std::exp(dt * Ac[s]);
                double hpv = hp ? hp[s] : 0.0;
                if (gA)
                  (*gA)[static_cast<std::size_t>(c) * n + s] +=
                      ghat * dt * abar * hpv;
                gdt_acc += ghat * (Ac[s] * abar * hpv + Bi[s] * uic);
                if (gB) (*gB)[static_cast<std::size_t>(i) * n + s] += ghat * dt * uic;
                gu_acc += ghat * dt * Bi[s];
                cr[s] = abar * ghat;
              }
              if (gu) (*gu)[static_cast<std::size_t>(i) * d + c] += gu_acc;
              if (gdt) (*gdt)[static_cast<std::size_t>(i) * d + c] += gdt_acc;
            }
          }
        });
  }
  return out;
}

Tensor selective_scan(const Tensor& u, const Tensor& delta, const Tensor& A,
                      const Tensor& B, const Tensor& C, const Tensor& D) {
  return selective_scan_chunked(u, delta, A, B, C, D, u.rows());
}

Tensor mamba_block(const Tensor& x, const MambaBlockParams& p) {
  require(x.rank() == 2 && x.cols() == p.dims.h,
          "mamba_block: input must be [L x h]");
  const MambaDims& d = p.dims;
  Tensor xz = linear(x, p.in_proj);  // [L x 2*d_inner]
  Tensor stream = slice_cols(xz, 0, d.d_inner);
  Tensor gate = slice_cols(xz, d.d_inner, d.d_inner);
  Tensor s = silu(depthwise_conv1d(stream, p.conv));
  Tensor dbc = linear(s, p.x_proj);
  Tensor dt_low = slice_cols(dbc, 0, d.d_dt);
  Tensor B = slice_cols(dbc, d.d_dt, d.d_state);
  Tensor C = slice_cols(dbc, d.d_dt + d.d_state, d.d_state);
  // Floor keeps delta strictly positive even when softplus underflows.
  Tensor delta = add(softplus(add_rowvec(linear(dt_low, p.dt_proj), p.dt_bias)),
                     Tensor::full({x.rows(), d.d_inner}, 1e-12));
  Tensor A = neg(exp(p.a_log));
  Tensor y = selective_scan(s, delta, A, B, C, p.d_skip);
  return linear(mul(y, silu(gate)), p.out_proj);
}

Tensor mamba_module(const Tensor& x, const MambaModuleParams& p) {
  Tensor r = add(x, mamba_block(x, p.block1));
  return add(r, mamba_block(r, p.block2));
}

}  // namespace duet::ssm
