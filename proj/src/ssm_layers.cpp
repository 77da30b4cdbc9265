#include "ssmlab/ssm/layers.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "ssmlab/kernels.hpp"
#include "ssmlab/linalg.hpp"
#include "ssmlab/parallel.hpp"

namespace ssmlab::ssm {

namespace {

using ad::detail::TensorImpl;
using P = std::shared_ptr<TensorImpl>;
using ad::Node;
using ad::Shape;

P make_impl(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  const auto n = ad::numel(shape);
  impl->shape = std::move(shape);
  impl->value.resize(static_cast<std::size_t>(n));
  return impl;
}

bool want_grad(std::initializer_list<const Tensor*> ts) {
  if (!ad::recording()) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

void record(std::vector<P> inputs, std::vector<P> outputs, std::function<void()> bwd) {
  for (auto& out : outputs) out->requires_grad = true;
  Node n;
  n.inputs = std::move(inputs);
  n.outputs = outputs;
  n.backward = std::move(bwd);
  const int id = ad::Graph::current()->add_node(std::move(n));
  for (auto& out : outputs) {
    out->producer = id;
    out->graph = ad::Graph::current();
  }
}

const double* grad_of(const P& t) {
  t->ensure_grad();
  return t->grad.data();
}

}  // namespace

Tensor causal_conv_fixed(const Tensor& u, const Tensor& k) {
  if (u.shape().size() != 3 || k.shape().size() != 2 || u.shape()[1] != k.shape()[0] ||
      u.shape()[2] != k.shape()[1])
    throw std::invalid_argument("causal_conv_fixed: need u[B,L,C], k[L,C]");
  const std::size_t B = static_cast<std::size_t>(u.shape()[0]);
  const std::size_t L = static_cast<std::size_t>(u.shape()[1]);
  const std::size_t C = static_cast<std::size_t>(u.shape()[2]);
  auto out = make_impl(u.shape());
  const double* up = u.data().data();
  const double* kp = k.data().data();
  double* yp = out->value.data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b)
      kernels::conv_fwd(kp, up + b * L * C, yp + b * L * C, L, C);
  }, 1);
  if (want_grad({&u, &k})) {
    P ui = u.impl(), ki = k.impl(), oi = out;
    record({ui, ki}, {oi}, [ui, ki, oi, B, L, C] {
      const double* go = grad_of(oi);
      if (ui->requires_grad) {
        ui->ensure_grad();
        double* gu = ui->grad.data();
        const double* kp2 = ki->value.data();
        par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t b = lo; b < hi; ++b)
            kernels::conv_bwd_u(kp2, go + b * L * C, gu + b * L * C, L, C);
        }, 1);
      }
      if (ki->requires_grad) {
        // shared kernel gradient: fixed per-block partials merged in order
        ki->ensure_grad();
        const double* up2 = ui->value.data();
        constexpr std::size_t kBlocks = 8;
        const std::size_t per = (B + kBlocks - 1) / kBlocks;
        std::vector<std::vector<double>> partial(kBlocks);
        par::parallel_for(kBlocks, [&](std::size_t blo, std::size_t bhi) {
          for (std::size_t blk = blo; blk < bhi; ++blk) {
            const std::size_t lo = blk * per, hi = std::min(B, lo + per);
            if (lo >= hi) continue;
            partial[blk].assign(L * C, 0.0);
            for (std::size_t b = lo; b < hi; ++b)
              kernels::conv_bwd_k(up2 + b * L * C, go + b * L * C, partial[blk].data(), L, C);
          }
        }, 1);
        for (auto& p : partial)
          if (!p.empty()) kernels::axpy(1.0, p.data(), ki->grad.data(), L * C);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor causal_conv_var(const Tensor& u, const Tensor& g) {
  if (u.shape().size() != 3 || g.shape().size() != 2 || u.shape()[0] != g.shape()[0] ||
      u.shape()[1] != g.shape()[1])
    throw std::invalid_argument("causal_conv_var: need u[B,L,C], g[B,L]");
  const std::size_t B = static_cast<std::size_t>(u.shape()[0]);
  const std::size_t L = static_cast<std::size_t>(u.shape()[1]);
  const std::size_t C = static_cast<std::size_t>(u.shape()[2]);
  auto out = make_impl(u.shape());
  const double* up = u.data().data();
  const double* gp = g.data().data();
  double* yp = out->value.data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b)
      kernels::conv_scalar_fwd(gp + b * L, up + b * L * C, yp + b * L * C, L, C);
  }, 1);
  if (want_grad({&u, &g})) {
    P ui = u.impl(), gi = g.impl(), oi = out;
    record({ui, gi}, {oi}, [ui, gi, oi, B, L, C] {
      const double* go = grad_of(oi);
      if (ui->requires_grad) ui->ensure_grad();
      if (gi->requires_grad) gi->ensure_grad();
      par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t b = lo; b < hi; ++b) {
          const double* gob = go + b * L * C;
          if (ui->requires_grad)
            kernels::conv_scalar_bwd_u(gi->value.data() + b * L, gob,
                                       ui->grad.data() + b * L * C, L, C);
          if (gi->requires_grad)
            kernels::conv_scalar_bwd_g(ui->value.data() + b * L * C, gob,
                                       gi->grad.data() + b * L, L, C);
        }
      }, 1);
    });
  }
  return Tensor::wrap(out);
}

namespace {

// Sequential lane recurrence x_l = a x_{l-1} + u_l over strided lanes.
void lane_scan_real(const double* a, const double* u, double* x, std::size_t L, std::size_t C) {
  std::memcpy(x, u, C * sizeof(double));
  for (std::size_t l = 1; l < L; ++l)
    kernels::mul_add(a, x + (l - 1) * C, u + l * C, x + l * C, C);
}

void lane_scan_real_blelloch(const double* a, const double* u, double* x, std::size_t L,
                             std::size_t C) {
  // Work-efficient scan per lane on (a, b) pairs; identical combine tree for
  // every lane, so results do not depend on threading.
  std::vector<std::pair<cplx, cplx>> lane(L);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t l = 0; l < L; ++l) lane[l] = {a[c], u[l * C + c]};
    blelloch_inclusive(lane);
    for (std::size_t l = 0; l < L; ++l) x[l * C + c] = lane[l].second.real();
  }
}

}  // namespace

Tensor diag_recurrence(const Tensor& a, const Tensor& u, bool parallel) {
  if (u.shape().size() != 3 || a.shape().size() != 1 || a.shape()[0] != u.shape()[2])
    throw std::invalid_argument("diag_recurrence: need a[C], u[B,L,C]");
  const std::size_t B = static_cast<std::size_t>(u.shape()[0]);
  const std::size_t L = static_cast<std::size_t>(u.shape()[1]);
  const std::size_t C = static_cast<std::size_t>(u.shape()[2]);
  auto out = make_impl(u.shape());
  const double* ap = a.data().data();
  const double* up = u.data().data();
  double* xp = out->value.data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      if (parallel)
        lane_scan_real_blelloch(ap, up + b * L * C, xp + b * L * C, L, C);
      else
        lane_scan_real(ap, up + b * L * C, xp + b * L * C, L, C);
    }
  }, 1);
  if (want_grad({&a, &u})) {
    P ai = a.impl(), ui = u.impl(), oi = out;
    record({ai, ui}, {oi}, [ai, ui, oi, B, L, C] {
      const double* go = grad_of(oi);
      const double* av = ai->value.data();
      const double* xv = oi->value.data();
      if (ui->requires_grad) ui->ensure_grad();
      if (ai->requires_grad) ai->ensure_grad();
      std::vector<double> ga_acc(ai->requires_grad ? C : 0, 0.0);
      std::vector<double> s(C);
      for (std::size_t b = 0; b < B; ++b) {
        const double* gb = go + b * L * C;
        const double* xb = xv + b * L * C;
        std::memcpy(s.data(), gb + (L - 1) * C, C * sizeof(double));
        for (std::size_t l = L; l-- > 0;) {
          if (l < L - 1)
            // s_l = g_l + a (.) s_{l+1}
            kernels::mul_add(av, s.data(), gb + l * C, s.data(), C);
          if (ui->requires_grad)
            kernels::axpy(1.0, s.data(), ui->grad.data() + (b * L + l) * C, C);
          if (ai->requires_grad && l > 0)
            kernels::mul_add(s.data(), xb + (l - 1) * C, ga_acc.data(), ga_acc.data(), C);
        }
      }
      if (ai->requires_grad) kernels::axpy(1.0, ga_acc.data(), ai->grad.data(), C);
    });
  }
  return Tensor::wrap(out);
}

std::pair<Tensor, Tensor> cdiag_recurrence(const Tensor& ar, const Tensor& ai, const Tensor& ur,
                                           const Tensor& ui, bool parallel) {
  if (ur.shape().size() != 3 || ar.shape().size() != 1 || ar.shape()[0] != ur.shape()[2] ||
      ur.shape() != ui.shape() || ai.shape() != ar.shape())
    throw std::invalid_argument("cdiag_recurrence: need a[C] (re,im), u[B,L,C] (re,im)");
  const std::size_t B = static_cast<std::size_t>(ur.shape()[0]);
  const std::size_t L = static_cast<std::size_t>(ur.shape()[1]);
  const std::size_t C = static_cast<std::size_t>(ur.shape()[2]);
  auto xr = make_impl(ur.shape());
  auto xi = make_impl(ur.shape());
  const double* arp = ar.data().data();
  const double* aip = ai.data().data();
  const double* urp = ur.data().data();
  const double* uip = ui.data().data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    std::vector<std::pair<cplx, cplx>> lane(parallel ? L : 0);
    for (std::size_t b = lo; b < hi; ++b) {
      double* xrb = xr->value.data() + b * L * C;
      double* xib = xi->value.data() + b * L * C;
      const double* urb = urp + b * L * C;
      const double* uib = uip + b * L * C;
      if (parallel) {
        for (std::size_t c = 0; c < C; ++c) {
          for (std::size_t l = 0; l < L; ++l)
            lane[l] = {cplx(arp[c], aip[c]), cplx(urb[l * C + c], uib[l * C + c])};
          blelloch_inclusive(lane);
          for (std::size_t l = 0; l < L; ++l) {
            xrb[l * C + c] = lane[l].second.real();
            xib[l * C + c] = lane[l].second.imag();
          }
        }
      } else {
        std::memcpy(xrb, urb, C * sizeof(double));
        std::memcpy(xib, uib, C * sizeof(double));
        for (std::size_t l = 1; l < L; ++l)
          for (std::size_t c = 0; c < C; ++c) {
            const double pr = xrb[(l - 1) * C + c], pi = xib[(l - 1) * C + c];
            xrb[l * C + c] = arp[c] * pr - aip[c] * pi + urb[l * C + c];
            xib[l * C + c] = aip[c] * pr + arp[c] * pi + uib[l * C + c];
          }
      }
    }
  }, 1);
  if (want_grad({&ar, &ai, &ur, &ui})) {
    P ari = ar.impl(), aii = ai.impl(), uri = ur.impl(), uii = ui.impl();
    P xri = xr, xii = xi;
    record({ari, aii, uri, uii}, {xri, xii}, [ari, aii, uri, uii, xri, xii, B, L, C] {
      const double* gr = grad_of(xri);
      const double* gi = grad_of(xii);
      const double* arv = ari->value.data();
      const double* aiv = aii->value.data();
      const double* xrv = xri->value.data();
      const double* xiv = xii->value.data();
      const bool need_u = uri->requires_grad || uii->requires_grad;
      const bool need_a = ari->requires_grad || aii->requires_grad;
      if (need_u) {
        uri->ensure_grad();
        uii->ensure_grad();
      }
      std::vector<double> gar(need_a ? C : 0, 0.0), gai(need_a ? C : 0, 0.0);
      std::vector<double> sr(C), si(C);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t base = b * L * C;
        std::memcpy(sr.data(), gr + base + (L - 1) * C, C * sizeof(double));
        std::memcpy(si.data(), gi + base + (L - 1) * C, C * sizeof(double));
        for (std::size_t l = L; l-- > 0;) {
          if (l < L - 1) {
            // s_l = g_l + conj(a) s_{l+1}
            for (std::size_t c = 0; c < C; ++c) {
              const double pr = sr[c], pi = si[c];
              sr[c] = arv[c] * pr + aiv[c] * pi + gr[base + l * C + c];
              si[c] = -aiv[c] * pr + arv[c] * pi + gi[base + l * C + c];
            }
          }
          if (need_u) {
            kernels::axpy(1.0, sr.data(), uri->grad.data() + base + l * C, C);
            kernels::axpy(1.0, si.data(), uii->grad.data() + base + l * C, C);
          }
          if (need_a && l > 0) {
            // grad_a += s_l * conj(x_{l-1})
            const double* pxr = xrv + base + (l - 1) * C;
            const double* pxi = xiv + base + (l - 1) * C;
            for (std::size_t c = 0; c < C; ++c) {
              gar[c] += sr[c] * pxr[c] + si[c] * pxi[c];
              gai[c] += si[c] * pxr[c] - sr[c] * pxi[c];
            }
          }
        }
      }
      if (ari->requires_grad) {
        ari->ensure_grad();
        kernels::axpy(1.0, gar.data(), ari->grad.data(), C);
      }
      if (aii->requires_grad) {
        aii->ensure_grad();
        kernels::axpy(1.0, gai.data(), aii->grad.data(), C);
      }
    });
  }
  return {Tensor::wrap(xr), Tensor::wrap(xi)};
}

Tensor dense_power_kernel(const Tensor& Abar, const Tensor& Bbar, const Tensor& Cmat,
                          std::int64_t L) {
  if (Abar.shape().size() != 2 || Abar.shape()[0] != Abar.shape()[1] ||
      Bbar.shape().size() != 1 || Bbar.shape()[0] != Abar.shape()[0] ||
      Cmat.shape().size() != 2 || Cmat.shape()[1] != Abar.shape()[0])
    throw std::invalid_argument("dense_power_kernel: need Abar[h,h], Bbar[h], C[d,h]");
  const std::size_t h = static_cast<std::size_t>(Abar.shape()[0]);
  const std::size_t d = static_cast<std::size_t>(Cmat.shape()[0]);
  const std::size_t Ls = static_cast<std::size_t>(L);
  auto out = make_impl({L, Cmat.shape()[0]});
  auto V = std::make_shared<std::vector<double>>(Ls * h);  // v_m = Abar^m Bbar
  {
    const double* ap = Abar.data().data();
    const double* cp = Cmat.data().data();
    double* vp = V->data();
    std::memcpy(vp, Bbar.data().data(), h * sizeof(double));
    for (std::size_t m = 0; m + 1 < Ls; ++m) {
      const double* vm = vp + m * h;
      double* vn = vp + (m + 1) * h;
      for (std::size_t i = 0; i < h; ++i) vn[i] = kernels::dot(ap + i * h, vm, h);
    }
    double* kp = out->value.data();
    for (std::size_t m = 0; m < Ls; ++m)
      for (std::size_t c = 0; c < d; ++c) kp[m * d + c] = kernels::dot(cp + c * h, vp + m * h, h);
  }
  if (want_grad({&Abar, &Bbar, &Cmat})) {
    P Ai = Abar.impl(), Bi = Bbar.impl(), Ci = Cmat.impl(), oi = out;
    record({Ai, Bi, Ci}, {oi}, [Ai, Bi, Ci, oi, V, h, d, Ls] {
      const double* gK = grad_of(oi);
      const double* vp = V->data();
      const double* cp = Ci->value.data();
      if (Ci->requires_grad) {
        Ci->ensure_grad();
        double* gC = Ci->grad.data();
        for (std::size_t m = 0; m < Ls; ++m)
          for (std::size_t c = 0; c < d; ++c)
            kernels::axpy(gK[m * d + c], vp + m * h, gC + c * h, h);
      }
      if (Ai->requires_grad || Bi->requires_grad) {
        // gv_m = sum_c gK[m,c] C[c,:], then reverse-accumulate through
        // v_{m+1} = Abar v_m.
        std::vector<double> gv(h), w(h, 0.0);
        const double* ap = Ai->value.data();
        if (Ai->requires_grad) Ai->ensure_grad();
        for (std::size_t m = Ls; m-- > 0;) {
          std::fill(gv.begin(), gv.end(), 0.0);
          for (std::size_t c = 0; c < d; ++c) kernels::axpy(gK[m * d + c], cp + c * h, gv.data(), h);
          if (m + 1 < Ls) {
            // w currently holds the adjoint of v_{m+1}; push through Abar.
            if (Ai->requires_grad)
              for (std::size_t i = 0; i < h; ++i)
                kernels::axpy(w[i], vp + m * h, Ai->grad.data() + i * h, h);
            std::vector<double> wn(h);
            for (std::size_t j = 0; j < h; ++j) {
              double acc = 0.0;
              for (std::size_t i = 0; i < h; ++i) acc += ap[i * h + j] * w[i];
              wn[j] = acc;
            }
            for (std::size_t j = 0; j < h; ++j) w[j] = wn[j] + gv[j];
          } else {
            w = gv;
          }
        }
        if (Bi->requires_grad) {
          Bi->ensure_grad();
          kernels::axpy(1.0, w.data(), Bi->grad.data(), h);
        }
      }
    });
  }
  return Tensor::wrap(out);
}

std::pair<Tensor, Tensor> bilinear_disc_dense(const Tensor& A, const Tensor& b, double dt) {
  if (A.shape().size() != 2 || A.shape()[0] != A.shape()[1] || b.shape().size() != 1 ||
      b.shape()[0] != A.shape()[0])
    throw std::invalid_argument("bilinear_disc_dense: need A[h,h], b[h]");
  const std::size_t h = static_cast<std::size_t>(A.shape()[0]);
  la::Mat Am(h, h);
  std::memcpy(Am.a.data(), A.data().data(), h * h * sizeof(double));
  la::Mat F = la::add(la::Mat::identity(h), la::scale(Am, -dt / 2.0));
  la::Lu lu;
  try {
    lu = la::lu_factor(F);
  } catch (const std::runtime_error&) {
    throw std::runtime_error("bilinear_disc_dense: (I - dt/2 A) singular, cond_1 estimate " +
                             std::to_string(la::cond_1(F)));
  }
  la::Mat Abar = lu.solve(la::add(la::Mat::identity(h), la::scale(Am, dt / 2.0)));
  std::vector<double> rhs(b.data().begin(), b.data().end());
  for (auto& v : rhs) v *= dt;
  auto Bbar = lu.solve(rhs);

  auto aout = make_impl({A.shape()[0], A.shape()[0]});
  auto bout = make_impl({A.shape()[0]});
  std::memcpy(aout->value.data(), Abar.a.data(), h * h * sizeof(double));
  std::memcpy(bout->value.data(), Bbar.data(), h * sizeof(double));
  if (want_grad({&A, &b})) {
    P Ai = A.impl(), bi = b.impl(), ao = aout, bo = bout;
    auto Fsaved = std::make_shared<la::Mat>(std::move(F));
    record({Ai, bi}, {ao, bo}, [Ai, bi, ao, bo, Fsaved, h, dt] {
      const double* gA = grad_of(ao);
      const double* gB = grad_of(bo);
      la::Lu luT = la::lu_factor(la::transpose(*Fsaved));
      // gG1 = F^-T gAbar,  gF = -gG1 Abar^T - (F^-T gBbar) Bbar^T
      la::Mat gAbar(h, h);
      std::memcpy(gAbar.a.data(), gA, h * h * sizeof(double));
      la::Mat gG1 = luT.solve(gAbar);
      std::vector<double> gBvec(gB, gB + h);
      auto gRhs = luT.solve(gBvec);
      la::Mat gF(h, h);
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < h; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < h; ++k) acc += gG1(i, k) * ao->value[j * h + k];
          gF(i, j) = -acc - gRhs[i] * bo->value[j];
        }
      if (Ai->requires_grad) {
        Ai->ensure_grad();
        for (std::size_t i = 0; i < h * h; ++i)
          Ai->grad[i] += dt / 2.0 * (gG1.a[i] - gF.a[i]);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < h; ++i) bi->grad[i] += dt * gRhs[i];
      }
    });
  }
  return {Tensor::wrap(aout), Tensor::wrap(bout)};
}

// --- complex pair helpers ----------------------------------------------------

CPair cmul(const CPair& a, const CPair& b) {
  return {ad::sub(ad::mul(a.re, b.re), ad::mul(a.im, b.im)),
          ad::add(ad::mul(a.re, b.im), ad::mul(a.im, b.re))};
}

CPair cdiv(const CPair& a, const CPair& b) {
  Tensor den = ad::add(ad::mul(b.re, b.re), ad::mul(b.im, b.im));
  Tensor re = ad::div(ad::add(ad::mul(a.re, b.re), ad::mul(a.im, b.im)), den);
  Tensor im = ad::div(ad::sub(ad::mul(a.im, b.re), ad::mul(a.re, b.im)), den);
  return {re, im};
}

CPair cexp(const CPair& a) {
  Tensor mag = ad::exp_op(a.re);
  return {ad::mul(mag, ad::cos_op(a.im)), ad::mul(mag, ad::sin_op(a.im))};
}

CPair cadd_scalar(const CPair& a, double re) { return {ad::add_scalar(a.re, re), a.im}; }

CPair cscale(const CPair& a, double s) { return {ad::mul_scalar(a.re, s), ad::mul_scalar(a.im, s)}; }

// --- layers -----------------------------------------------------------------

Activation activation_from(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
  }
  return "?";
}

Tensor apply_activation(Activation a, const Tensor& x) {
  switch (a) {
    case Activation::relu: return ad::relu(x);
    case Activation::sigmoid: return ad::sigmoid(x);
    case Activation::tanh: return ad::tanh_act(x);
  }
  throw std::logic_error("unreachable");
}

Tensor AdsLayer::forward(const Tensor& y) const {
  Tensor g1 = apply_activation(act, ad::add_bias(ad::matmul(y, w1), b1));
  Tensor g2 = apply_activation(act, ad::add_bias(ad::matmul(y, w2), b2));
  return ad::add(ad::mul(g1, y), g2);
}

Tensor EmaLayer::forward(const Tensor& u) const {
  if (u.shape()[2] != d) throw std::invalid_argument("EmaLayer: channel mismatch");
  Tensor alpha = ad::sigmoid(alpha_raw);
  Tensor delta = ad::sigmoid(delta_raw);
  Tensor a = ad::add_scalar(ad::neg(ad::mul(alpha, delta)), 1.0);  // 1 - alpha.delta
  Tensor gain = ad::mul(alpha, beta);                              // alpha . beta
  Tensor ue = ad::repeat_last(u, h);                               // [B,L,d*h]
  Tensor x = diag_recurrence(a, ad::mul_gain(ue, gain));
  return ad::sum_groups(ad::mul_gain(x, eta), h);
}

EMAParams EmaLayer::freeze() const {
  EMAParams p;
  p.alpha = la::Mat(static_cast<std::size_t>(d), static_cast<std::size_t>(h));
  p.delta = p.alpha;
  p.beta = p.alpha;
  p.eta = p.alpha;
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  for (std::size_t i = 0; i < p.alpha.a.size(); ++i) {
    p.alpha.a[i] = sig(alpha_raw.data()[i]);
    p.delta.a[i] = sig(delta_raw.data()[i]);
    p.beta.a[i] = beta.data()[i];
    p.eta.a[i] = eta.data()[i];
  }
  return p;
}

Tensor AttentionLayer::forward(const Tensor& y, const Tensor& u) const {
  const std::int64_t d = y.shape()[2];
  Tensor q = ad::matmul(y, wq);
  Tensor k = ad::matmul(y, wk);
  Tensor v = ad::matmul(u, wv);
  Tensor scores = ad::mul_scalar(bmm(q, k, /*trans_b=*/true),
                                 1.0 / std::sqrt(static_cast<double>(d)));
  Tensor attn = ad::softmax(scores, 2);  // row-stochastic over keys
  Tensor ctx = bmm(attn, v);
  return ad::add(ctx, y);
}

Tensor S6Layer::forward(const Tensor& x) const {
  const std::int64_t h = lambda_log.shape()[0];
  Tensor dt = ad::softplus(ad::add_bias(ad::matmul(x, w_dt), b_dt));  // [B,L,1]
  Tensor Bk = ad::matmul(x, w_B);                                     // [B,L,h]
  Tensor Ck = ad::matmul(x, w_C);                                     // [B,L,h]
  Tensor lambda = ad::neg(ad::exp_op(lambda_log));                    // [h], strictly negative
  Tensor w = ad::matmul(dt, ad::reshape(lambda, {1, h}));             // [B,L,h] = lambda dt_k
  // prod_{i<m} exp(lambda dt_i) = exp(cumsum_excl(lambda dt))
  Tensor Pm = ad::exp_op(cumsum_seq(w, /*exclusive=*/true));  // [B,L,h]
  // Bbar_m = dt_m phi1(lambda dt_m) B_m
  Tensor Bbar = ad::mul(ad::mul(ad::phi1(w), Bk), ad::matmul(dt, Tensor::full({1, h}, 1.0)));
  Tensor gk = ad::sum_last(ad::mul(Ck, ad::mul(Pm, Bbar)));  // [B,L]
  return causal_conv_var(x, gk);
}

StepwiseSSM S6Layer::freeze(const Tensor& x, std::int64_t batch_index) const {
  const std::int64_t L = x.shape()[1], C = x.shape()[2];
  const std::int64_t h = lambda_log.shape()[0];
  StepwiseSSM out;
  const auto Ls = static_cast<std::size_t>(L);
  const auto hs = static_cast<std::size_t>(h);
  out.abar.assign(Ls, std::vector<double>(hs));
  out.bbar.assign(Ls, std::vector<double>(hs));
  out.cbar.assign(Ls, std::vector<double>(hs));
  const double* xv = x.data().data() + batch_index * L * C;
  auto sp = [](double v) {
    if (v > 30.0) return v;
    if (v < -30.0) return std::exp(v);
    return std::log1p(std::exp(v));
  };
  for (std::size_t k = 0; k < Ls; ++k) {
    const double* xk = xv + k * C;
    double dtk = b_dt.data()[0];
    for (std::int64_t c = 0; c < C; ++c) dtk += xk[c] * w_dt.data()[static_cast<std::size_t>(c)];
    dtk = sp(dtk);
    for (std::size_t s = 0; s < hs; ++s) {
      double Bks = 0.0, Cks = 0.0;
      for (std::int64_t c = 0; c < C; ++c) {
        Bks += xk[c] * w_B.data()[static_cast<std::size_t>(c * h) + s];
        Cks += xk[c] * w_C.data()[static_cast<std::size_t>(c * h) + s];
      }
      const double lam = -std::exp(lambda_log.data()[s]);
      const double w = lam * dtk;
      out.abar[k][s] = std::exp(w);
      const double p1 = std::fabs(w) < 1e-8 ? 1.0 + 0.5 * w + w * w / 6.0 : std::expm1(w) / w;
      out.bbar[k][s] = dtk * p1 * Bks;
      out.cbar[k][s] = Cks;
    }
  }
  return out;
}

}  // namespace ssmlab::ssm
