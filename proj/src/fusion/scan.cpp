// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "xmf/errors.hpp"
#include "xmf/fault.hpp"
#include "xmf/fusion.hpp"

namespace xmf::fusion {
namespace {

constexpr double kNormEps = 1e-5;

void expect_shape(const Tensor& t, const Shape& want, const char* what) {
  if (t.shape() != want) {
    throw DimensionError(std::string(what) + ": expected shape " + shape_str(want) + ", got " +
                         shape_str(t.shape()));
  }
}

void expect_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a rank-2 tensor, got " +
                         shape_str(t.shape()));
  }
}

}  // namespace

Var layer_norm(const Var& x, const Var& gamma, const Var& beta) {
  const Tensor& xv = x.value();
  expect_matrix(xv, "layer_norm");
  const std::size_t L = xv.rows(), d = xv.cols();
  expect_shape(gamma.value(), {d}, "layer_norm gamma");
  expect_shape(beta.value(), {d}, "layer_norm beta");

  Tensor xhat({L, d});
  std::vector<double> inv_std(L);
  Tensor out({L, d});
  for (std::size_t r = 0; r < L; ++r) {
    const auto row = xv.row(r);
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + kNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      xhat(r, c) = (row[c] - mu) * inv_std[r];
      out(r, c) = gamma.value()[c] * xhat(r, c) + beta.value()[c];
    }
  }

  return make_var(std::move(out), {x, gamma, beta},
                  [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const double f = fault::gradient_factor(fault::Site::layer_norm);
    const std::size_t L = xhat.rows(), d = xhat.cols();
    const Tensor& gy = self.grad;
    if (pg.requires_grad || pb.requires_grad) {
      for (std::size_t r = 0; r < L; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
          if (pg.requires_grad) pg.grad_buffer()[c] += f * gy(r, c) * xhat(r, c);
          if (pb.requires_grad) pb.grad_buffer()[c] += f * gy(r, c);
        }
      }
    }
    if (!px.requires_grad) return;
    Tensor& gx = px.grad_buffer();
    std::vector<double> gxh(d);
    for (std::size_t r = 0; r < L; ++r) {
      double m1 = 0.0, m2 = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        gxh[c] = gy(r, c) * pg.value[c];
        m1 += gxh[c];
        m2 += gxh[c] * xhat(r, c);
      }
      m1 /= static_cast<double>(d);
      m2 /= static_cast<double>(d);
      for (std::size_t c = 0; c < d; ++c) {
        gx(r, c) += f * inv_std[r] * (gxh[c] - m1 - xhat(r, c) * m2);
      }
    }
  });
}

Var scan_core(const Var& x, const Var& delta, const Var& a, const Var& b, const Var& c,
              const Var& d_skip) {
  const Tensor& xv = x.value();
  expect_matrix(xv, "selective_scan input");
  const std::size_t L = xv.rows(), d = xv.cols();
  if (L == 0) throw DimensionError("selective_scan: empty sequence");
  const std::size_t N = a.value().rank() == 2 ? a.value().cols() : 0;
  expect_shape(delta.value(), {L, d}, "selective_scan delta");
  expect_shape(a.value(), {d, N}, "selective_scan A");
  expect_shape(b.value(), {L, N}, "selective_scan B");
  expect_shape(c.value(), {L, N}, "selective_scan C");
  expect_shape(d_skip.value(), {d}, "selective_scan D");
  if (!xv.all_finite()) throw NumericError("selective_scan: non-finite input");

  const Tensor& dv = delta.value();
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Tensor& cv = c.value();
  const Tensor& sv = d_skip.value();
  const bool need_history = x.requires_grad() || delta.requires_grad() || a.requires_grad() ||
                            b.requires_grad() || c.requires_grad() || d_skip.requires_grad();

  // history holds h_0 .. h_L, each d x N, only when a backward pass follows.
  std::vector<double> history;
  if (need_history) history.assign((L + 1) * d * N, 0.0);
  std::vector<double> h(d * N, 0.0);
  Tensor y({L, d});
  for (std::size_t t = 0; t < L; ++t) {
    bool finite = true;
    for (std::size_t ch = 0; ch < d; ++ch) {
      const double dt = dv(t, ch);
      const double xt = xv(t, ch);
      double acc = sv[ch] * xt;
      for (std::size_t n = 0; n < N; ++n) {
        double& state = h[ch * N + n];
        state = std::exp(dt * av(ch, n)) * state + dt * bv(t, n) * xt;
        acc += cv(t, n) * state;
      }
      y(t, ch) = acc;
      finite = finite && std::isfinite(acc);
    }
    if (!finite) {
      throw NumericError("selective_scan: non-finite state at timestep " + std::to_string(t));
    }
    if (need_history) std::copy(h.begin(), h.end(), history.begin() + (t + 1) * d * N);
  }

  return make_var(std::move(y), {x, delta, a, b, c, d_skip},
                  [history = std::move(history), L, d, N](Node& self) {
    Node& px = *self.parents[0];
    Node& pdelta = *self.parents[1];
    Node& pa = *self.parents[2];
    Node& pb = *self.parents[3];
    Node& pc = *self.parents[4];
    Node& pd = *self.parents[5];
    const Tensor& xv = px.value;
    const Tensor& dv = pdelta.value;
    const Tensor& av = pa.value;
    const Tensor& bv = pb.value;
    const Tensor& cv = pc.value;
    const Tensor& sv = pd.value;
    const double f = fault::gradient_factor(fault::Site::scan);

    Tensor gx({L, d}), gdelta({L, d}), ga({d, N}), gb({L, N}), gc({L, N}), gd({d});
    std::vector<double> carry(d * N, 0.0);  // dLoss/dh_t arriving from step t+1
    for (std::size_t t = L; t-- > 0;) {
      const double* h_t = history.data() + (t + 1) * d * N;
      const double* h_prev = history.data() + t * d * N;
      for (std::size_t ch = 0; ch < d; ++ch) {
        const double gy = f * self.grad(t, ch);
        const double xt = xv(t, ch);
        const double dt = dv(t, ch);
        gd[ch] += gy * xt;
        gx(t, ch) += gy * sv[ch];
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t k = ch * N + n;
          gc(t, n) += gy * h_t[k];
          const double gh = gy * cv(t, n) + carry[k];
          const double abar = std::exp(dt * av(ch, n));
          const double g_abar = gh * h_prev[k] * abar;
          gdelta(t, ch) += g_abar * av(ch, n) + gh * bv(t, n) * xt;
          ga(ch, n) += g_abar * dt;
          gb(t, n) += gh * dt * xt;
          gx(t, ch) += gh * dt * bv(t, n);
          carry[k] = gh * abar;
        }
      }
    }
    if (px.requires_grad) px.accumulate(gx);
    if (pdelta.requires_grad) pdelta.accumulate(gdelta);
    if (pa.requires_grad) pa.accumulate(ga);
    if (pb.requires_grad) pb.accumulate(gb);
    if (pc.requires_grad) pc.accumulate(gc);
    if (pd.requires_grad) pd.accumulate(gd);
  });
}

Var selective_scan(const Var& x, const MambaLayerVars& p) {
  const Var delta = softplus(add_row_vector(matmul(x, p.w_delta), p.b_delta));
  const Var b = add_row_vector(matmul(x, p.w_b), p.b_b);
  const Var c = add_row_vector(matmul(x, p.w_c), p.b_c);
  const Var a = scale(exp(p.a_log), -1.0);
  return scan_core(x, delta, a, b, c, p.d_skip);
}

Var mamba_block(const Var& x, const MambaLayerVars& p) {
  const Var xh = layer_norm(x, p.norm_gamma, p.norm_beta);
  const Var gate = silu(matmul(xh, p.w_gate));
  const Var branch = mul(gate, selective_scan(xh, p));
  return add(x, matmul(branch, p.w_out));
}

// --- interleaving --------------------------------------------------------------

namespace {

void check_interleave_inputs(const Tensor& xa, const Tensor& xv, const Tensor& xl) {
  expect_matrix(xa, "interleave audio");
  expect_matrix(xv, "interleave video");
  expect_matrix(xl, "interleave language");
  if (xa.shape() != xl.shape() || xv.shape() != xl.shape()) {
    throw DimensionError("interleave: shapes differ (audio " + shape_str(xa.shape()) + ", video " +
                         shape_str(xv.shape()) + ", language " + shape_str(xl.shape()) + ")");
  }
}

void check_deinterleave_input(const Tensor& x) {
  expect_matrix(x, "deinterleave");
  if (x.rows() % 3 != 0) {
    throw DimensionError("deinterleave: length " + std::to_string(x.rows()) +
                         " is not divisible by 3");
  }
}

std::vector<std::size_t> interleave_index(std::size_t T) {
  // Output row 3t + m comes from row t of modality m in the stacked [a; v; l].
  std::vector<std::size_t> idx(3 * T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t m = 0; m < 3; ++m) idx[3 * t + m] = m * T + t;
  }
  return idx;
}

}  // namespace

Tensor interleave(const Tensor& xa, const Tensor& xv, const Tensor& xl) {
  check_interleave_inputs(xa, xv, xl);
  const std::size_t T = xl.rows(), d = xl.cols();
  Tensor out({3 * T, d});
  const Tensor* parts[3] = {&xa, &xv, &xl};
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t m = 0; m < 3; ++m) {
      const auto src = parts[m]->row(t);
      std::copy(src.begin(), src.end(), out.row(3 * t + m).begin());
    }
  }
  return out;
}

std::array<Tensor, 3> deinterleave(const Tensor& xmm) {
  check_deinterleave_input(xmm);
  const std::size_t T = xmm.rows() / 3, d = xmm.cols();
  std::array<Tensor, 3> out{Tensor({T, d}), Tensor({T, d}), Tensor({T, d})};
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t m = 0; m < 3; ++m) {
      const auto src = xmm.row(3 * t + m);
      std::copy(src.begin(), src.end(), out[m].row(t).begin());
    }
  }
  return out;
}

Var interleave(const Var& xa, const Var& xv, const Var& xl) {
  check_interleave_inputs(xa.value(), xv.value(), xl.value());
  const Var parts[3] = {xa, xv, xl};
  const auto idx = interleave_index(xl.rows());
  return gather_rows(concat_rows(parts), idx);
}

std::array<Var, 3> deinterleave(const Var& xmm) {
  check_deinterleave_input(xmm.value());
  const std::size_t T = xmm.rows() / 3;
  std::array<Var, 3> out;
  for (std::size_t m = 0; m < 3; ++m) {
    std::vector<std::size_t> idx(T);
    for (std::size_t t = 0; t < T; ++t) idx[t] = 3 * t + m;
    out[m] = gather_rows(xmm, idx);
  }
  return out;
}

}  // namespace xmf::fusion
