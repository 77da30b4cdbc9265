#include "ssmlab/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace ssmlab::kernels::detail {
namespace {

constexpr double kExpLo = -708.0;
constexpr double kExpHi = 709.0;

void s_add(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}
void s_sub(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}
void s_mul(const double* a, const double* b, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}
void s_mul_add(const double* a, const double* b, const double* c, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i] + c[i];
}
void s_scale(const double* a, double s, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = s * a[i];
}
void s_axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}
double s_dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}
double s_sum(const double* a, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}
double s_max(const double* a, std::size_t n) {
  double m = a[0];
  for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
  return m;
}
void s_vexp(const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(std::clamp(a[i], kExpLo, kExpHi));
}
void s_vtanh(const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]);
}
void s_vsigmoid(const double* a, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::clamp(a[i], kExpLo, kExpHi);
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
}

void s_matmul_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* oi = out + i * n;
    if (!accumulate)
      for (std::size_t j = 0; j < n; ++j) oi[j] = 0.0;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      const double* bk = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) oi[j] += av * bk[j];
    }
  }
}

void s_matmul_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
                 std::size_t k, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double d = s_dot(a + i * n, b + kk * n, n);
      out[i * k + kk] = accumulate ? out[i * k + kk] + d : d;
    }
}

void s_matmul_tn_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      s_axpy(av, b + i * n, out + kk * n, n);
    }
}

void s_conv_fwd(const double* kc, const double* u, double* y, std::size_t L, std::size_t C) {
  for (std::size_t i = 0; i < L * C; ++i) y[i] = 0.0;
  for (std::size_t j = 0; j < L; ++j)
    for (std::size_t mm = 0; mm + j < L; ++mm)
      s_mul_add(kc + mm * C, u + j * C, y + (j + mm) * C, y + (j + mm) * C, C);
}

void s_conv_bwd_u(const double* kc, const double* gy, double* gu, std::size_t L, std::size_t C) {
  for (std::size_t j = 0; j < L; ++j)
    for (std::size_t mm = 0; mm + j < L; ++mm)
      s_mul_add(kc + mm * C, gy + (j + mm) * C, gu + j * C, gu + j * C, C);
}

void s_conv_bwd_k(const double* u, const double* gy, double* gk, std::size_t L, std::size_t C) {
  for (std::size_t mm = 0; mm < L; ++mm)
    for (std::size_t j = 0; j + mm < L; ++j)
      s_mul_add(u + j * C, gy + (j + mm) * C, gk + mm * C, gk + mm * C, C);
}

void s_conv_scalar_fwd(const double* g, const double* u, double* y, std::size_t L,
                       std::size_t C) {
  for (std::size_t i = 0; i < L * C; ++i) y[i] = 0.0;
  for (std::size_t mm = 0; mm < L; ++mm) {
    const double w = g[mm];
    if (w == 0.0) continue;
    for (std::size_t j = 0; j + mm < L; ++j) s_axpy(w, u + j * C, y + (j + mm) * C, C);
  }
}

void s_conv_scalar_bwd_u(const double* g, const double* gy, double* gu, std::size_t L,
                         std::size_t C) {
  for (std::size_t mm = 0; mm < L; ++mm) {
    const double w = g[mm];
    if (w == 0.0) continue;
    for (std::size_t j = 0; j + mm < L; ++j) s_axpy(w, gy + (j + mm) * C, gu + j * C, C);
  }
}

void s_conv_scalar_bwd_g(const double* u, const double* gy, double* gg, std::size_t L,
                         std::size_t C) {
  for (std::size_t mm = 0; mm < L; ++mm) {
    double acc = 0.0;
    for (std::size_t j = 0; j + mm < L; ++j) acc += s_dot(u + j * C, gy + (j + mm) * C, C);
    gg[mm] += acc;
  }
}

}  // namespace

const Impl& scalar_impl() {
  static const Impl impl{s_add,       s_sub,        s_mul,        s_mul_add,
                         s_scale,     s_axpy,       s_dot,        s_sum,
                         s_max,       s_vexp,       s_vtanh,      s_vsigmoid,
                         s_matmul_nn, s_matmul_nt,  s_matmul_tn_acc,
                         s_conv_fwd,  s_conv_bwd_u, s_conv_bwd_k,
                         s_conv_scalar_fwd, s_conv_scalar_bwd_u, s_conv_scalar_bwd_g};
  return impl;
}

}  // namespace ssmlab::kernels::detail
