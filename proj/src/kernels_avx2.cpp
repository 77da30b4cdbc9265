// AVX2+FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma; it is only dispatched to after a runtime cpuid check.

#include "ssmlab/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cstring>
#include <algorithm>
#include <cmath>

namespace ssmlab::kernels::detail {
namespace {

constexpr double kExpLo = -708.0;
constexpr double kExpHi = 709.0;

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// exp on 4 lanes: Cody-Waite range reduction + degree-13 Taylor, then 2^n
// scaling via exponent-field construction. Input must already be clamped to
// [kExpLo, kExpHi].
inline __m256d vexp4(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d ln2_lo = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d n = _mm256_round_pd(_mm256_mul_pd(x, log2e),
                                    _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, x);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  // sum_{k=0}^{13} r^k / k!
  const double c[] = {1.0 / 6227020800.0, 1.0 / 479001600.0, 1.0 / 39916800.0,
                      1.0 / 3628800.0,    1.0 / 362880.0,    1.0 / 40320.0,
                      1.0 / 5040.0,       1.0 / 720.0,       1.0 / 120.0,
                      1.0 / 24.0,         1.0 / 6.0,         0.5,
                      1.0,                1.0};
  __m256d p = _mm256_set1_pd(c[0]);
  for (int i = 1; i < 14; ++i) p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(c[i]));

  // 2^n: (n + 1023) << 52 as the exponent field. n >= -1022 after clamping.
  const __m256d magic = _mm256_set1_pd(6755399441055744.0);  // 1.5 * 2^52
  __m256d biased = _mm256_add_pd(_mm256_add_pd(n, _mm256_set1_pd(1023.0)), magic);
  __m256i e = _mm256_slli_epi64(_mm256_castpd_si256(biased), 52);
  return _mm256_mul_pd(p, _mm256_castsi256_pd(e));
}

inline __m256d clamp4(__m256d x, double lo, double hi) {
  return _mm256_min_pd(_mm256_max_pd(x, _mm256_set1_pd(lo)), _mm256_set1_pd(hi));
}

void a_add(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}
void a_sub(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}
void a_mul(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}
void a_mul_add(const double* a, const double* b, const double* c, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                              _mm256_loadu_pd(c + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i] + c[i];
}
void a_scale(const double* a, double s, double* out, std::size_t n) {
  const __m256d vs = _mm256_set1_pd(s);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(vs, _mm256_loadu_pd(a + i)));
  for (; i < n; ++i) out[i] = s * a[i];
}
void a_axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}
double a_dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}
double a_sum(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i];
  return s;
}
double a_max(const double* a, std::size_t n) {
  if (n < 8) {
    double m = a[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, a[i]);
    return m;
  }
  __m256d acc = _mm256_loadu_pd(a);
  std::size_t i = 4;
  for (; i + 4 <= n; i += 4) acc = _mm256_max_pd(acc, _mm256_loadu_pd(a + i));
  alignas(32) double lanes[4];
  _mm256_store_pd(lanes, acc);
  double m = std::max(std::max(lanes[0], lanes[1]), std::max(lanes[2], lanes[3]));
  for (; i < n; ++i) m = std::max(m, a[i]);
  return m;
}
void a_vexp(const double* a, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, vexp4(clamp4(_mm256_loadu_pd(a + i), kExpLo, kExpHi)));
  for (; i < n; ++i) out[i] = std::exp(std::clamp(a[i], kExpLo, kExpHi));
}
void a_vtanh(const double* a, double* out, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d two = _mm256_set1_pd(2.0);
  const __m256d signmask = _mm256_set1_pd(-0.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d x = _mm256_loadu_pd(a + i);
    __m256d sign = _mm256_and_pd(x, signmask);
    __m256d ax = _mm256_andnot_pd(signmask, x);
    // tanh(|x|) = 1 - 2/(exp(2|x|)+1); saturates at |x| ~ 19
    __m256d e = vexp4(clamp4(_mm256_mul_pd(two, ax), 0.0, 40.0));
    __m256d t = _mm256_sub_pd(one, _mm256_div_pd(two, _mm256_add_pd(e, one)));
    _mm256_storeu_pd(out + i, _mm256_or_pd(t, sign));
  }
  for (; i < n; ++i) out[i] = std::tanh(a[i]);
}
void a_vsigmoid(const double* a, double* out, std::size_t n) {
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d x = clamp4(_mm256_loadu_pd(a + i), kExpLo, kExpHi);
    __m256d e = vexp4(_mm256_sub_pd(_mm256_setzero_pd(), x));
    _mm256_storeu_pd(out + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
  }
  for (; i < n; ++i) {
    const double x = std::clamp(a[i], kExpLo, kExpHi);
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
  }
}

// Register-blocked fused loops: these carry the bulk of the training FLOPs,
// so the mul/add bodies are inlined rather than routed through the small
// per-span entry points.

inline void fma_span(const double* a, const double* b, double* o, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(o + i, _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i),
                                            _mm256_loadu_pd(o + i)));
  for (; i < n; ++i) o[i] += a[i] * b[i];
}

inline void axpy_span(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void a_matmul_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                 std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    double* oi = out + i * n;
    if (!accumulate) std::memset(oi, 0, n * sizeof(double));
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      axpy_span(av, b + kk * n, oi, n);
    }
  }
}

void a_matmul_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
                 std::size_t k, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double d = a_dot(a + i * n, b + kk * n, n);
      out[i * k + kk] = accumulate ? out[i * k + kk] + d : d;
    }
}

void a_matmul_tn_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                     std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = a[i * k + kk];
      if (av == 0.0) continue;
      axpy_span(av, b + i * n, out + kk * n, n);
    }
}

// out[,:C] = sum over `count` row pairs a[i*C], b[i*C] with register
// accumulators; NR lanes of 4 doubles (NR*4 == C) stay resident.
template <int NR>
inline void rows_mac(const double* a, const double* b, double* out, std::size_t count,
                     std::ptrdiff_t stride_a, std::ptrdiff_t stride_b, bool accumulate) {
  __m256d acc[NR];
  if (accumulate)
    for (int l = 0; l < NR; ++l) acc[l] = _mm256_loadu_pd(out + 4 * l);
  else
    for (int l = 0; l < NR; ++l) acc[l] = _mm256_setzero_pd();
  for (std::size_t i = 0; i < count; ++i) {
    const double* ar = a + static_cast<std::ptrdiff_t>(i) * stride_a;
    const double* br = b + static_cast<std::ptrdiff_t>(i) * stride_b;
    for (int l = 0; l < NR; ++l)
      acc[l] = _mm256_fmadd_pd(_mm256_loadu_pd(ar + 4 * l), _mm256_loadu_pd(br + 4 * l), acc[l]);
  }
  for (int l = 0; l < NR; ++l) _mm256_storeu_pd(out + 4 * l, acc[l]);
}

template <int NR>
void conv_fwd_fixed(const double* kc, const double* u, double* y, std::size_t L) {
  const std::size_t C = 4 * NR;
  for (std::size_t t = 0; t < L; ++t)
    // y[t] = sum_{m<=t} kc[m] . u[t-m]: kernel rows ascend, input rows descend
    rows_mac<NR>(kc, u + t * C, y + t * C, t + 1, static_cast<std::ptrdiff_t>(C),
                 -static_cast<std::ptrdiff_t>(C), false);
}

template <int NR>
void conv_bwd_u_fixed(const double* kc, const double* gy, double* gu, std::size_t L) {
  const std::size_t C = 4 * NR;
  for (std::size_t j = 0; j < L; ++j)
    rows_mac<NR>(kc, gy + j * C, gu + j * C, L - j, static_cast<std::ptrdiff_t>(C),
                 static_cast<std::ptrdiff_t>(C), true);
}

template <int NR>
void conv_bwd_k_fixed(const double* u, const double* gy, double* gk, std::size_t L) {
  const std::size_t C = 4 * NR;
  for (std::size_t mm = 0; mm < L; ++mm)
    rows_mac<NR>(u, gy + mm * C, gk + mm * C, L - mm, static_cast<std::ptrdiff_t>(C),
                 static_cast<std::ptrdiff_t>(C), true);
}

void a_conv_fwd(const double* kc, const double* u, double* y, std::size_t L, std::size_t C) {
  switch (C) {
    case 16: conv_fwd_fixed<4>(kc, u, y, L); return;
    case 32: conv_fwd_fixed<8>(kc, u, y, L); return;
    default: break;
  }
  std::memset(y, 0, L * C * sizeof(double));
  for (std::size_t j = 0; j < L; ++j) {
    const double* uj = u + j * C;
    for (std::size_t mm = 0; mm + j < L; ++mm) fma_span(kc + mm * C, uj, y + (j + mm) * C, C);
  }
}

void a_conv_bwd_u(const double* kc, const double* gy, double* gu, std::size_t L, std::size_t C) {
  switch (C) {
    case 16: conv_bwd_u_fixed<4>(kc, gy, gu, L); return;
    case 32: conv_bwd_u_fixed<8>(kc, gy, gu, L); return;
    default: break;
  }
  for (std::size_t j = 0; j < L; ++j) {
    double* guj = gu + j * C;
    for (std::size_t mm = 0; mm + j < L; ++mm) fma_span(kc + mm * C, gy + (j + mm) * C, guj, C);
  }
}

void a_conv_bwd_k(const double* u, const double* gy, double* gk, std::size_t L, std::size_t C) {
  switch (C) {
    case 16: conv_bwd_k_fixed<4>(u, gy, gk, L); return;
    case 32: conv_bwd_k_fixed<8>(u, gy, gk, L); return;
    default: break;
  }
  for (std::size_t mm = 0; mm < L; ++mm) {
    double* gkm = gk + mm * C;
    for (std::size_t j = 0; j + mm < L; ++j) fma_span(u + j * C, gy + (j + mm) * C, gkm, C);
  }
}

void a_conv_scalar_fwd(const double* g, const double* u, double* y, std::size_t L,
                       std::size_t C) {
  std::memset(y, 0, L * C * sizeof(double));
  for (std::size_t mm = 0; mm < L; ++mm) {
    const double w = g[mm];
    if (w == 0.0) continue;
    for (std::size_t j = 0; j + mm < L; ++j) axpy_span(w, u + j * C, y + (j + mm) * C, C);
  }
}

void a_conv_scalar_bwd_u(const double* g, const double* gy, double* gu, std::size_t L,
                         std::size_t C) {
  for (std::size_t mm = 0; mm < L; ++mm) {
    const double w = g[mm];
    if (w == 0.0) continue;
    for (std::size_t j = 0; j + mm < L; ++j) axpy_span(w, gy + (j + mm) * C, gu + j * C, C);
  }
}

void a_conv_scalar_bwd_g(const double* u, const double* gy, double* gg, std::size_t L,
                         std::size_t C) {
  for (std::size_t mm = 0; mm < L; ++mm) {
    double acc = 0.0;
    for (std::size_t j = 0; j + mm < L; ++j) acc += a_dot(u + j * C, gy + (j + mm) * C, C);
    gg[mm] += acc;
  }
}

}  // namespace

const Impl* avx2_impl() {
  static const Impl impl{a_add,       a_sub,        a_mul,        a_mul_add,
                         a_scale,     a_axpy,       a_dot,        a_sum,
                         a_max,       a_vexp,       a_vtanh,      a_vsigmoid,
                         a_matmul_nn, a_matmul_nt,  a_matmul_tn_acc,
                         a_conv_fwd,  a_conv_bwd_u, a_conv_bwd_k,
                         a_conv_scalar_fwd, a_conv_scalar_bwd_u, a_conv_scalar_bwd_g};
  return &impl;
}

}  // namespace ssmlab::kernels::detail

#else

namespace ssmlab::kernels::detail {
const Impl* avx2_impl() { return nullptr; }
}  // namespace ssmlab::kernels::detail

#endif
