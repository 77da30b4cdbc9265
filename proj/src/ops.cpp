#include "ssmlab/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "ssmlab/kernels.hpp"
#include "ssmlab/parallel.hpp"

namespace ssmlab::ad {

namespace {

using detail::TensorImpl;
using P = std::shared_ptr<TensorImpl>;

constexpr std::size_t kParGrain = 16384;

P make_impl(Shape shape) {
  auto impl = std::make_shared<TensorImpl>();
  const auto n = numel(shape);
  impl->shape = std::move(shape);
  impl->value.resize(static_cast<std::size_t>(n));
  return impl;
}

bool any_requires(std::initializer_list<const Tensor*> ts) {
  if (!recording()) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Record a node if grads are needed; sets requires_grad on outputs.
void record(std::vector<P> inputs, std::vector<P> outputs, std::function<void()> bwd) {
  bool need = recording();
  if (need) {
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    need = any;
  }
  if (!need) return;
  for (auto& out : outputs) out->requires_grad = true;
  Node n;
  n.inputs = std::move(inputs);
  n.outputs = outputs;
  n.backward = std::move(bwd);
  const int id = Graph::current()->add_node(std::move(n));
  for (auto& out : outputs) {
    out->producer = id;
    out->graph = Graph::current();
  }
}

const double* grad_of(const P& t) {
  t->ensure_grad();
  return t->grad.data();
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
}

void par_chunks(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  par::parallel_for(n, fn, kParGrain);
}

// dst[i] += g[i] * v[i]
void accum_mul(double* dst, const double* g, const double* v, std::size_t n) {
  kernels::mul_add(g, v, dst, dst, n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  auto out = make_impl(a.shape());
  const std::size_t n = out->value.size();
  par_chunks(n, [&](std::size_t lo, std::size_t hi) {
    kernels::add(a.data().data() + lo, b.data().data() + lo, out->value.data() + lo, hi - lo);
  });
  if (any_requires({&a, &b})) {
    P ai = a.impl(), bi = b.impl(), oi = out;
    record({ai, bi}, {oi}, [ai, bi, oi, n] {
      const double* go = grad_of(oi);
      if (ai->requires_grad) ai->accumulate_grad(go, n);
      if (bi->requires_grad) bi->accumulate_grad(go, n);
    });
  }
  return Tensor::wrap(out);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  auto out = make_impl(a.shape());
  const std::size_t n = out->value.size();
  par_chunks(n, [&](std::size_t lo, std::size_t hi) {
    kernels::sub(a.data().data() + lo, b.data().data() + lo, out->value.data() + lo, hi - lo);
  });
  if (any_requires({&a, &b})) {
    P ai = a.impl(), bi = b.impl(), oi = out;
    record({ai, bi}, {oi}, [ai, bi, oi, n] {
      const double* go = grad_of(oi);
      if (ai->requires_grad) ai->accumulate_grad(go, n);
      if (bi->requires_grad) {
        bi->ensure_grad();
        kernels::axpy(-1.0, go, bi->grad.data(), n);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  auto out = make_impl(a.shape());
  const std::size_t n = out->value.size();
  par_chunks(n, [&](std::size_t lo, std::size_t hi) {
    kernels::mul(a.data().data() + lo, b.data().data() + lo, out->value.data() + lo, hi - lo);
  });
  if (any_requires({&a, &b})) {
    P ai = a.impl(), bi = b.impl(), oi = out;
    record({ai, bi}, {oi}, [ai, bi, oi, n] {
      const double* go = grad_of(oi);
      if (ai->requires_grad) {
        ai->ensure_grad();
        accum_mul(ai->grad.data(), go, bi->value.data(), n);
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        accum_mul(bi->grad.data(), go, ai->value.data(), n);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  auto out = make_impl(a.shape());
  const std::size_t n = out->value.size();
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = ap[i] / bp[i];
  if (any_requires({&a, &b})) {
    P ai = a.impl(), bi = b.impl(), oi = out;
    record({ai, bi}, {oi}, [ai, bi, oi, n] {
      const double* go = grad_of(oi);
      const double* bv = bi->value.data();
      const double* yv = oi->value.data();
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) ai->grad[i] += go[i] / bv[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) bi->grad[i] -= go[i] * yv[i] / bv[i];
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor add_scalar(const Tensor& a, double s) {
  auto out = make_impl(a.shape());
  const std::size_t n = out->value.size();
  for (std::size_t i = 0; i < n; ++i) out->value[i] = a.data()[i] + s;
  if (any_requires({&a})) {
    P ai = a.impl(), oi = out;
    record({ai}, {oi}, [ai, oi, n] { ai->accumulate_grad(grad_of(oi), n); });
  }
  return Tensor::wrap(out);
}

Tensor mul_scalar(const Tensor& a, double s) {
  auto out = make_impl(a.shape());
  const std::size_t n = out->value.size();
  kernels::scale(a.data().data(), s, out->value.data(), n);
  if (any_requires({&a})) {
    P ai = a.impl(), oi = out;
    record({ai}, {oi}, [ai, oi, n, s] {
      ai->ensure_grad();
      kernels::axpy(s, grad_of(oi), ai->grad.data(), n);
    });
  }
  return Tensor::wrap(out);
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor add_bias(const Tensor& x, const Tensor& b) {
  if (b.shape().size() != 1 || x.shape().empty() || x.shape().back() != b.shape()[0])
    throw std::invalid_argument("add_bias: bias must match trailing axis");
  const std::size_t d = static_cast<std::size_t>(b.shape()[0]);
  const std::size_t rows = x.data().size() / d;
  auto out = make_impl(x.shape());
  par::parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r)
      kernels::add(x.data().data() + r * d, b.data().data(), out->value.data() + r * d, d);
  }, 256);
  if (any_requires({&x, &b})) {
    P xi = x.impl(), bi = b.impl(), oi = out;
    record({xi, bi}, {oi}, [xi, bi, oi, rows, d] {
      const double* go = grad_of(oi);
      if (xi->requires_grad) xi->accumulate_grad(go, rows * d);
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          kernels::axpy(1.0, go + r * d, bi->grad.data(), d);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor mul_gain(const Tensor& x, const Tensor& g) {
  if (g.shape().size() != 1 || x.shape().empty() || x.shape().back() != g.shape()[0])
    throw std::invalid_argument("mul_gain: gain must match trailing axis");
  const std::size_t d = static_cast<std::size_t>(g.shape()[0]);
  const std::size_t rows = x.data().size() / d;
  auto out = make_impl(x.shape());
  par::parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r)
      kernels::mul(x.data().data() + r * d, g.data().data(), out->value.data() + r * d, d);
  }, 256);
  if (any_requires({&x, &g})) {
    P xi = x.impl(), gi = g.impl(), oi = out;
    record({xi, gi}, {oi}, [xi, gi, oi, rows, d] {
      const double* go = grad_of(oi);
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          accum_mul(xi->grad.data() + r * d, go + r * d, gi->value.data(), d);
      }
      if (gi->requires_grad) {
        gi->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r)
          accum_mul(gi->grad.data(), go + r * d, xi->value.data() + r * d, d);
      }
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// Elementwise activations

namespace {

// dfn(x, y) returns f'(x) where y = f(x).
Tensor unary_op(const Tensor& x, void (*fwd)(const double*, double*, std::size_t),
                double (*dfn)(double, double)) {
  auto out = make_impl(x.shape());
  const std::size_t n = out->value.size();
  par_chunks(n, [&](std::size_t lo, std::size_t hi) {
    fwd(x.data().data() + lo, out->value.data() + lo, hi - lo);
  });
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, n, dfn] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      const double* xv = xi->value.data();
      const double* yv = oi->value.data();
      par_chunks(n, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i) gx[i] += go[i] * dfn(xv[i], yv[i]);
      });
    });
  }
  return Tensor::wrap(out);
}

void fwd_relu(const double* a, double* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = a[i] > 0.0 ? a[i] : 0.0;
}
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

void gelu_inner(const double* a, double* tmp, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i];
    tmp[i] = kGeluC * (x + 0.044715 * x * x * x);
  }
}
void fwd_sin(const double* a, double* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = std::sin(a[i]);
}
void fwd_cos(const double* a, double* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = std::cos(a[i]);
}
void fwd_softplus(const double* a, double* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = a[i];
    if (x > 30.0) o[i] = x;
    else if (x < -30.0) o[i] = std::exp(x);
    else o[i] = std::log1p(std::exp(x));
  }
}
double phi1_val(double x) {
  if (std::fabs(x) < 1e-8) return 1.0 + 0.5 * x + x * x / 6.0;
  return std::expm1(x) / x;
}
void fwd_phi1(const double* a, double* o, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) o[i] = phi1_val(a[i]);
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary_op(x, fwd_relu, [](double xv, double) { return xv > 0.0 ? 1.0 : 0.0; });
}
Tensor sigmoid(const Tensor& x) {
  return unary_op(x, kernels::vsigmoid, [](double, double y) { return y * (1.0 - y); });
}
Tensor tanh_act(const Tensor& x) {
  return unary_op(x, kernels::vtanh, [](double, double y) { return 1.0 - y * y; });
}
Tensor gelu(const Tensor& x) {
  // vectorized tanh dominates this op's cost; forward and backward both go
  // through kernels::vtanh on a scratch buffer
  auto out = make_impl(x.shape());
  const std::size_t n = out->value.size();
  const double* xp = x.data().data();
  double* op = out->value.data();
  par_chunks(n, [&](std::size_t lo, std::size_t hi) {
    const std::size_t len = hi - lo;
    std::vector<double> t(len);
    gelu_inner(xp + lo, t.data(), len);
    kernels::vtanh(t.data(), t.data(), len);
    for (std::size_t i = 0; i < len; ++i) op[lo + i] = 0.5 * xp[lo + i] * (1.0 + t[i]);
  });
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, n] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      const double* xv = xi->value.data();
      par_chunks(n, [&](std::size_t lo, std::size_t hi) {
        const std::size_t len = hi - lo;
        std::vector<double> t(len);
        gelu_inner(xv + lo, t.data(), len);
        kernels::vtanh(t.data(), t.data(), len);
        for (std::size_t i = 0; i < len; ++i) {
          const double xvv = xv[lo + i];
          const double du = kGeluC * (1.0 + 3.0 * 0.044715 * xvv * xvv);
          gx[lo + i] += go[lo + i] * (0.5 * (1.0 + t[i]) + 0.5 * xvv * (1.0 - t[i] * t[i]) * du);
        }
      });
    });
  }
  return Tensor::wrap(out);
}
Tensor silu(const Tensor& x) {
  auto out = make_impl(x.shape());
  const std::size_t n = out->value.size();
  const double* xp = x.data().data();
  double* op = out->value.data();
  par_chunks(n, [&](std::size_t lo, std::size_t hi) {
    kernels::vsigmoid(xp + lo, op + lo, hi - lo);
    kernels::mul(xp + lo, op + lo, op + lo, hi - lo);
  });
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, n] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      const double* xv = xi->value.data();
      par_chunks(n, [&](std::size_t lo, std::size_t hi) {
        const std::size_t len = hi - lo;
        std::vector<double> s(len);
        kernels::vsigmoid(xv + lo, s.data(), len);
        for (std::size_t i = 0; i < len; ++i)
          gx[lo + i] += go[lo + i] * s[i] * (1.0 + xv[lo + i] * (1.0 - s[i]));
      });
    });
  }
  return Tensor::wrap(out);
}
Tensor exp_op(const Tensor& x) {
  return unary_op(x, kernels::vexp, [](double, double y) { return y; });
}
Tensor sin_op(const Tensor& x) {
  return unary_op(x, fwd_sin, [](double xv, double) { return std::cos(xv); });
}
Tensor cos_op(const Tensor& x) {
  return unary_op(x, fwd_cos, [](double xv, double) { return -std::sin(xv); });
}
Tensor softplus(const Tensor& x) {
  return unary_op(x, fwd_softplus,
                  [](double xv, double) { return 1.0 / (1.0 + std::exp(-xv)); });
}
Tensor phi1(const Tensor& x) {
  return unary_op(x, fwd_phi1, [](double xv, double) {
    if (std::fabs(xv) < 1e-8) return 0.5 + xv / 3.0 + xv * xv / 8.0;
    return (std::exp(xv) * (xv - 1.0) + 1.0) / (xv * xv);
  });
}

// ---------------------------------------------------------------------------
// Linear algebra ops

Tensor matmul(const Tensor& x, const Tensor& w) {
  // x may have any rank >= 2: leading axes are treated as flattened rows.
  if (x.shape().size() < 2 || w.shape().size() != 2 || x.shape().back() != w.shape()[0])
    throw std::invalid_argument("matmul: need [...,k]@[k,n], got " + shape_str(x.shape()) +
                                " @ " + shape_str(w.shape()));
  const std::size_t k = static_cast<std::size_t>(x.shape().back());
  const std::size_t m = x.data().size() / k;
  const std::size_t n = static_cast<std::size_t>(w.shape()[1]);
  Shape out_shape = x.shape();
  out_shape.back() = w.shape()[1];
  auto out = make_impl(std::move(out_shape));
  const double* xp = x.data().data();
  const double* wp = w.data().data();
  double* op = out->value.data();
  const std::size_t row_grain = std::max<std::size_t>(1, kParGrain / std::max<std::size_t>(1, n * k));
  par::parallel_for(m, [&](std::size_t lo, std::size_t hi) {
    kernels::matmul_nn(xp + lo * k, wp, op + lo * n, hi - lo, k, n, false);
  }, row_grain);
  if (any_requires({&x, &w})) {
    P xi = x.impl(), wi = w.impl(), oi = out;
    record({xi, wi}, {oi}, [xi, wi, oi, m, k, n, row_grain] {
      const double* go = grad_of(oi);
      if (xi->requires_grad) {
        xi->ensure_grad();
        double* gx = xi->grad.data();
        const double* wp2 = wi->value.data();
        par::parallel_for(m, [&](std::size_t lo, std::size_t hi) {
          kernels::matmul_nt(go + lo * n, wp2, gx + lo * k, hi - lo, n, k, true);
        }, row_grain);
      }
      if (wi->requires_grad) {
        // k x n accumulation is shared across rows; fixed-block partials keep
        // the reduction order independent of the worker count.
        wi->ensure_grad();
        const double* xp2 = xi->value.data();
        constexpr std::size_t kBlocks = 8;
        const std::size_t per = (m + kBlocks - 1) / kBlocks;
        std::vector<std::vector<double>> partial(kBlocks);
        par::parallel_for(kBlocks, [&](std::size_t blo, std::size_t bhi) {
          for (std::size_t blk = blo; blk < bhi; ++blk) {
            const std::size_t lo = blk * per, hi = std::min(m, lo + per);
            if (lo >= hi) continue;
            partial[blk].assign(k * n, 0.0);
            kernels::matmul_tn_acc(xp2 + lo * k, go + lo * n, partial[blk].data(), hi - lo, k, n);
          }
        }, 1);
        for (auto& p : partial)
          if (!p.empty()) kernels::axpy(1.0, p.data(), wi->grad.data(), k * n);
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0])
    throw std::invalid_argument("bmm: need [B,m,k]@[B,k,n]");
  const std::size_t B = static_cast<std::size_t>(a.shape()[0]);
  const std::size_t m = static_cast<std::size_t>(a.shape()[1]);
  const std::size_t k = static_cast<std::size_t>(a.shape()[2]);
  const std::size_t n = static_cast<std::size_t>(trans_b ? b.shape()[1] : b.shape()[2]);
  if ((trans_b ? b.shape()[2] : b.shape()[1]) != a.shape()[2])
    throw std::invalid_argument("bmm: inner dimension mismatch");
  auto out = make_impl({a.shape()[0], a.shape()[1], static_cast<std::int64_t>(n)});
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  double* op = out->value.data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t bi = lo; bi < hi; ++bi) {
      const double* amat = ap + bi * m * k;
      const double* bmat = bp + bi * (trans_b ? n * k : k * n);
      double* omat = op + bi * m * n;
      if (trans_b)
        kernels::matmul_nt(amat, bmat, omat, m, k, n, false);
      else
        kernels::matmul_nn(amat, bmat, omat, m, k, n, false);
    }
  }, 1);
  if (any_requires({&a, &b})) {
    P ai = a.impl(), bi2 = b.impl(), oi = out;
    record({ai, bi2}, {oi}, [ai, bi2, oi, B, m, k, n, trans_b] {
      const double* go = grad_of(oi);
      const double* ap2 = ai->value.data();
      const double* bp2 = bi2->value.data();
      if (ai->requires_grad) ai->ensure_grad();
      if (bi2->requires_grad) bi2->ensure_grad();
      par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t bb = lo; bb < hi; ++bb) {
          const double* amat = ap2 + bb * m * k;
          const double* bmat = bp2 + bb * (trans_b ? n * k : k * n);
          const double* gomat = go + bb * m * n;
          if (ai->requires_grad) {
            double* gamat = ai->grad.data() + bb * m * k;
            if (trans_b)
              kernels::matmul_nn(gomat, bmat, gamat, m, n, k, true);  // go[m,n] @ b[n,k]
            else
              kernels::matmul_nt(gomat, bmat, gamat, m, n, k, true);  // go[m,n] @ b^T
          }
          if (bi2->requires_grad) {
            double* gbmat = bi2->grad.data() + bb * (trans_b ? n * k : k * n);
            if (trans_b)
              kernels::matmul_tn_acc(gomat, amat, gbmat, m, n, k);  // go^T[n,m] @ a[m,k]
            else
              kernels::matmul_tn_acc(amat, gomat, gbmat, m, k, n);  // a^T @ go
          }
        }
      }, 1);
    });
  }
  return Tensor::wrap(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw std::invalid_argument("reshape: element count mismatch " + shape_str(x.shape()) +
                                " -> " + shape_str(shape));
  auto out = make_impl(std::move(shape));
  out->value = x.impl()->value;
  const std::size_t n = out->value.size();
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, n] { xi->accumulate_grad(grad_of(oi), n); });
  }
  return Tensor::wrap(out);
}

Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t len) {
  const Shape& s = x.shape();
  if (s.empty() || start < 0 || len <= 0 || start + len > s.back())
    throw std::invalid_argument("slice_last: bad range");
  const std::size_t d = static_cast<std::size_t>(s.back());
  const std::size_t rows = x.data().size() / d;
  Shape os = s;
  os.back() = len;
  auto out = make_impl(os);
  const std::size_t ld = static_cast<std::size_t>(len);
  for (std::size_t r = 0; r < rows; ++r)
    std::memcpy(out->value.data() + r * ld, x.data().data() + r * d + start, ld * sizeof(double));
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, rows, d, ld, start] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        kernels::axpy(1.0, go + r * ld, xi->grad.data() + r * d + start, ld);
    });
  }
  return Tensor::wrap(out);
}

Tensor repeat_last(const Tensor& x, std::int64_t times) {
  if (times < 1) throw std::invalid_argument("repeat_last: times must be >= 1");
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("repeat_last: rank must be >= 1");
  const std::size_t d = static_cast<std::size_t>(s.back());
  const std::size_t rows = x.data().size() / d;
  const std::size_t t = static_cast<std::size_t>(times);
  Shape os = s;
  os.back() *= times;
  auto out = make_impl(os);
  const double* xp = x.data().data();
  double* op = out->value.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c)
      for (std::size_t k = 0; k < t; ++k) op[(r * d + c) * t + k] = xp[r * d + c];
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, rows, d, t] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) {
          double acc = 0.0;
          for (std::size_t k = 0; k < t; ++k) acc += go[(r * d + c) * t + k];
          xi->grad[r * d + c] += acc;
        }
    });
  }
  return Tensor::wrap(out);
}

// ---------------------------------------------------------------------------
// Softmax / losses / normalization / reductions

Tensor softmax(const Tensor& x, int axis) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw std::invalid_argument("softmax: bad axis");
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= static_cast<std::size_t>(s[i]);
  for (int i = axis + 1; i < rank; ++i) inner *= static_cast<std::size_t>(s[i]);
  const std::size_t len = static_cast<std::size_t>(s[axis]);
  auto out = make_impl(s);
  const double* xp = x.data().data();
  double* op = out->value.data();
  par::parallel_for(outer * inner, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      const std::size_t o = r / inner, in = r % inner;
      const double* xs = xp + o * len * inner + in;
      double* os = op + o * len * inner + in;
      double mx = xs[0];
      for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, xs[i * inner]);
      double sum = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        const double e = std::exp(xs[i * inner] - mx);
        os[i * inner] = e;
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::size_t i = 0; i < len; ++i) os[i * inner] *= inv;
    }
  }, 64);
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, outer, inner, len] {
      const double* go = grad_of(oi);
      const double* y = oi->value.data();
      xi->ensure_grad();
      double* gx = xi->grad.data();
      par::parallel_for(outer * inner, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t r = lo; r < hi; ++r) {
          const std::size_t o = r / inner, in = r % inner;
          const std::size_t base = o * len * inner + in;
          double dotv = 0.0;
          for (std::size_t i = 0; i < len; ++i) dotv += go[base + i * inner] * y[base + i * inner];
          for (std::size_t i = 0; i < len; ++i)
            gx[base + i * inner] += y[base + i * inner] * (go[base + i * inner] - dotv);
        }
      }, 64);
    });
  }
  return Tensor::wrap(out);
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  if (logits.shape().size() != 2)
    throw std::invalid_argument("cross_entropy: logits must be [batch, K]");
  const std::size_t B = static_cast<std::size_t>(logits.shape()[0]);
  const std::size_t K = static_cast<std::size_t>(logits.shape()[1]);
  if (K < 2) throw std::invalid_argument("cross_entropy: K must be >= 2");
  if (labels.size() != B) throw std::invalid_argument("cross_entropy: label count mismatch");
  for (auto y : labels)
    if (y < 0 || y >= static_cast<std::int64_t>(K))
      throw std::invalid_argument("cross_entropy: label " + std::to_string(y) + " out of [0," +
                                  std::to_string(K) + ")");
  auto probs = std::make_shared<std::vector<double>>(B * K);
  const double* zp = logits.data().data();
  double loss = 0.0;
  for (std::size_t i = 0; i < B; ++i) {
    const double* z = zp + i * K;
    double* p = probs->data() + i * K;
    const double mx = kernels::max(z, K);
    double sum = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      p[j] = std::exp(z[j] - mx);
      sum += p[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < K; ++j) p[j] *= inv;
    loss += mx + std::log(sum) - z[static_cast<std::size_t>(labels[i])];
  }
  loss /= static_cast<double>(B);
  auto out = make_impl({});
  out->value[0] = loss;
  if (any_requires({&logits})) {
    P zi = logits.impl(), oi = out;
    auto lab = labels;
    record({zi}, {oi}, [zi, oi, probs, lab, B, K] {
      const double g = grad_of(oi)[0] / static_cast<double>(B);
      zi->ensure_grad();
      double* gz = zi->grad.data();
      const double* p = probs->data();
      for (std::size_t i = 0; i < B; ++i) {
        for (std::size_t j = 0; j < K; ++j) gz[i * K + j] += g * p[i * K + j];
        gz[i * K + static_cast<std::size_t>(lab[i])] -= g;
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor kl_div_rows(const Tensor& p_in, const Tensor& q_in, KlInput kind) {
  check_same_shape(p_in, q_in, "kl_div_rows");
  if (p_in.shape().size() != 2) throw std::invalid_argument("kl_div_rows: need [rows, K]");
  const std::size_t B = static_cast<std::size_t>(p_in.shape()[0]);
  const std::size_t K = static_cast<std::size_t>(p_in.shape()[1]);
  constexpr double kFloor = 1e-12;
  auto p = std::make_shared<std::vector<double>>(B * K);
  auto q = std::make_shared<std::vector<double>>(B * K);
  if (kind == KlInput::logits) {
    for (std::size_t i = 0; i < B; ++i) {
      for (auto [src, dst] : {std::pair{p_in.data().data(), p->data()},
                              std::pair{q_in.data().data(), q->data()}}) {
        const double* z = src + i * K;
        double* o = dst + i * K;
        const double mx = kernels::max(z, K);
        double sum = 0.0;
        for (std::size_t j = 0; j < K; ++j) {
          o[j] = std::exp(z[j] - mx);
          sum += o[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < K; ++j) o[j] = std::max(o[j] * inv, kFloor);
      }
    }
  } else {
    for (std::size_t i = 0; i < B * K; ++i) {
      const double pv = p_in.data()[i], qv = q_in.data()[i];
      if (pv < 0.0 || qv < 0.0)
        throw std::invalid_argument("kl_div_rows: negative probability input");
      (*p)[i] = std::max(pv, kFloor);
      (*q)[i] = std::max(qv, kFloor);
    }
  }
  auto out = make_impl({static_cast<std::int64_t>(B)});
  for (std::size_t i = 0; i < B; ++i) {
    double kl = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      const double pv = (*p)[i * K + j], qv = (*q)[i * K + j];
      kl += pv * (std::log(pv) - std::log(qv));
    }
    out->value[i] = kl;
  }
  if (any_requires({&p_in, &q_in})) {
    P pi = p_in.impl(), qi = q_in.impl(), oi = out;
    const bool from_logits = kind == KlInput::logits;
    record({pi, qi}, {oi}, [pi, qi, oi, p, q, B, K, from_logits] {
      const double* go = grad_of(oi);
      for (std::size_t i = 0; i < B; ++i) {
        const double g = go[i];
        if (g == 0.0) continue;
        const double* pr = p->data() + i * K;
        const double* qr = q->data() + i * K;
        if (from_logits) {
          const double klv = oi->value[i];
          if (pi->requires_grad) {
            pi->ensure_grad();
            double* gp = pi->grad.data() + i * K;
            for (std::size_t j = 0; j < K; ++j)
              gp[j] += g * pr[j] * (std::log(pr[j]) - std::log(qr[j]) - klv);
          }
          if (qi->requires_grad) {
            qi->ensure_grad();
            double* gq = qi->grad.data() + i * K;
            for (std::size_t j = 0; j < K; ++j) gq[j] += g * (qr[j] - pr[j]);
          }
        } else {
          if (pi->requires_grad) {
            pi->ensure_grad();
            double* gp = pi->grad.data() + i * K;
            for (std::size_t j = 0; j < K; ++j)
              gp[j] += g * (std::log(pr[j]) - std::log(qr[j]) + 1.0);
          }
          if (qi->requires_grad) {
            qi->ensure_grad();
            double* gq = qi->grad.data() + i * K;
            for (std::size_t j = 0; j < K; ++j) gq[j] += -g * pr[j] / qr[j];
          }
        }
      }
    });
  }
  return Tensor::wrap(out);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const Shape& s = x.shape();
  if (s.empty() || gamma.shape().size() != 1 || beta.shape().size() != 1 ||
      gamma.shape()[0] != s.back() || beta.shape()[0] != s.back())
    throw std::invalid_argument("layer_norm: gamma/beta must match trailing axis");
  const std::size_t d = static_cast<std::size_t>(s.back());
  const std::size_t rows = x.data().size() / d;
  auto out = make_impl(s);
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto rstd = std::make_shared<std::vector<double>>(rows);
  const double* xp = x.data().data();
  const double* gp = gamma.data().data();
  const double* bp = beta.data().data();
  double* op = out->value.data();
  par::parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) {
      const double* xr = xp + r * d;
      double msum = 0.0;
      for (std::size_t j = 0; j < d; ++j) msum += xr[j];
      const double mean = msum / static_cast<double>(d);
      double var = 0.0;
      for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mean) * (xr[j] - mean);
      var /= static_cast<double>(d);
      const double rs = 1.0 / std::sqrt(var + eps);
      (*rstd)[r] = rs;
      double* xh = xhat->data() + r * d;
      double* orow = op + r * d;
      for (std::size_t j = 0; j < d; ++j) {
        xh[j] = (xr[j] - mean) * rs;
        orow[j] = gp[j] * xh[j] + bp[j];
      }
    }
  }, 64);
  if (any_requires({&x, &gamma, &beta})) {
    P xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out;
    record({xi, gi, bi}, {oi}, [xi, gi, bi, oi, xhat, rstd, rows, d] {
      const double* go = grad_of(oi);
      const double* gp2 = gi->value.data();
      if (gi->requires_grad) gi->ensure_grad();
      if (bi->requires_grad) bi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* gor = go + r * d;
        const double* xh = xhat->data() + r * d;
        if (gi->requires_grad) accum_mul(gi->grad.data(), gor, xh, d);
        if (bi->requires_grad) kernels::axpy(1.0, gor, bi->grad.data(), d);
      }
      if (xi->requires_grad) {
        xi->ensure_grad();
        double* gx = xi->grad.data();
        par::parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
          for (std::size_t r = lo; r < hi; ++r) {
            const double* gor = go + r * d;
            const double* xh = xhat->data() + r * d;
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = gor[j] * gp2[j];
              sum_g += gj;
              sum_gx += gj * xh[j];
            }
            const double inv_d = 1.0 / static_cast<double>(d);
            const double rs = (*rstd)[r];
            for (std::size_t j = 0; j < d; ++j) {
              const double gj = gor[j] * gp2[j];
              gx[r * d + j] += rs * (gj - sum_g * inv_d - xh[j] * sum_gx * inv_d);
            }
          }
        }, 64);
      }
    });
  }
  return Tensor::wrap(out);
}

namespace {

// Deterministic blocked sum independent of thread count.
double blocked_sum(const double* a, std::size_t n) {
  constexpr std::size_t kBlock = 4096;
  if (n <= kBlock) return kernels::sum(a, n);
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  std::vector<double> partial(nblocks);
  par::parallel_for(nblocks, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b)
      partial[b] = kernels::sum(a + b * kBlock, std::min(kBlock, n - b * kBlock));
  }, 1);
  return kernels::sum(partial.data(), nblocks);
}

}  // namespace

Tensor sum_all(const Tensor& x) {
  auto out = make_impl({});
  const std::size_t n = x.data().size();
  out->value[0] = blocked_sum(x.data().data(), n);
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, n] {
      const double g = grad_of(oi)[0];
      xi->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) xi->grad[i] += g;
    });
  }
  return Tensor::wrap(out);
}

Tensor mean_all(const Tensor& x) {
  return mul_scalar(sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor mean_axis1(const Tensor& x) {
  if (x.shape().size() != 3) throw std::invalid_argument("mean_axis1: need [B,L,d]");
  const std::size_t B = static_cast<std::size_t>(x.shape()[0]);
  const std::size_t L = static_cast<std::size_t>(x.shape()[1]);
  const std::size_t d = static_cast<std::size_t>(x.shape()[2]);
  auto out = make_impl({x.shape()[0], x.shape()[2]});
  const double inv = 1.0 / static_cast<double>(L);
  const double* xp = x.data().data();
  double* op = out->value.data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      double* orow = op + b * d;
      std::memset(orow, 0, d * sizeof(double));
      for (std::size_t l = 0; l < L; ++l) kernels::axpy(inv, xp + (b * L + l) * d, orow, d);
    }
  }, 4);
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, B, L, d, inv] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
          kernels::axpy(inv, go + b * d, gx + (b * L + l) * d, d);
    });
  }
  return Tensor::wrap(out);
}

Tensor sum_last(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.empty()) throw std::invalid_argument("sum_last: rank must be >= 1");
  const std::size_t h = static_cast<std::size_t>(s.back());
  const std::size_t rows = x.data().size() / h;
  Shape os(s.begin(), s.end() - 1);
  auto out = make_impl(os);
  const double* xp = x.data().data();
  double* op = out->value.data();
  par::parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r) op[r] = kernels::sum(xp + r * h, h);
  }, 256);
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, rows, h] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < h; ++j) gx[r * h + j] += go[r];
    });
  }
  return Tensor::wrap(out);
}

Tensor sum_groups(const Tensor& x, std::int64_t h) {
  const Shape& s = x.shape();
  if (s.empty() || h < 1 || s.back() % h != 0)
    throw std::invalid_argument("sum_groups: trailing axis must be a multiple of h");
  const std::size_t hs = static_cast<std::size_t>(h);
  const std::size_t d = static_cast<std::size_t>(s.back() / h);
  const std::size_t rows = x.data().size() / (d * hs);
  Shape os = s;
  os.back() = static_cast<std::int64_t>(d);
  auto out = make_impl(os);
  const double* xp = x.data().data();
  double* op = out->value.data();
  par::parallel_for(rows, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t r = lo; r < hi; ++r)
      for (std::size_t c = 0; c < d; ++c)
        op[r * d + c] = kernels::sum(xp + (r * d + c) * hs, hs);
  }, 64);
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, rows, d, hs] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c)
          for (std::size_t k = 0; k < hs; ++k) gx[(r * d + c) * hs + k] += go[r * d + c];
    });
  }
  return Tensor::wrap(out);
}

Tensor cumsum_seq(const Tensor& x, bool exclusive) {
  if (x.shape().size() != 3) throw std::invalid_argument("cumsum_seq: need [B,L,C]");
  const std::size_t B = static_cast<std::size_t>(x.shape()[0]);
  const std::size_t L = static_cast<std::size_t>(x.shape()[1]);
  const std::size_t C = static_cast<std::size_t>(x.shape()[2]);
  auto out = make_impl(x.shape());
  const double* xp = x.data().data();
  double* op = out->value.data();
  par::parallel_for(B, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t b = lo; b < hi; ++b) {
      const double* xb = xp + b * L * C;
      double* ob = op + b * L * C;
      for (std::size_t c = 0; c < C; ++c) ob[c] = exclusive ? 0.0 : xb[c];
      for (std::size_t l = 1; l < L; ++l)
        for (std::size_t c = 0; c < C; ++c)
          ob[l * C + c] = ob[(l - 1) * C + c] + xb[(l - (exclusive ? 1 : 0)) * C + c];
    }
  }, 1);
  if (any_requires({&x})) {
    P xi = x.impl(), oi = out;
    record({xi}, {oi}, [xi, oi, B, L, C, exclusive] {
      const double* go = grad_of(oi);
      xi->ensure_grad();
      double* gx = xi->grad.data();
      // Suffix sums with matching exclusivity.
      std::vector<double> acc(C);
      for (std::size_t b = 0; b < B; ++b) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t l = L; l-- > 0;) {
          const double* g = go + (b * L + l) * C;
          double* gxr = gx + (b * L + l) * C;
          if (exclusive) {
            for (std::size_t c = 0; c < C; ++c) {
              gxr[c] += acc[c];
              acc[c] += g[c];
            }
          } else {
            for (std::size_t c = 0; c < C; ++c) {
              acc[c] += g[c];
              gxr[c] += acc[c];
            }
          }
        }
      }
    });
  }
  return Tensor::wrap(out);
}

}  // namespace ssmlab::ad
