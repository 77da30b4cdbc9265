#pragma once
// Low-level numeric kernels on contiguous double arrays.
//
// Every kernel has a scalar reference implementation and, on x86-64 with
// AVX2+FMA, a vectorized variant. The active backend is chosen once at
// startup from cpuid and can be pinned with force_backend() or the
// SSMLAB_KERNELS environment variable ("scalar" / "avx2").
//
// Reductions (dot, sum) and the transcendental maps are not bit-identical
// across backends (summation order, polynomial evaluation); the equivalence
// tests in tests/test_kernels.cpp pin the allowed divergence. Within one
// process run the selected backend is fixed, so reruns are bit-identical.

#include <cstddef>
#include <string>

namespace ssmlab::kernels {

enum class Backend { scalar, avx2 };

// Active backend. Resolved on first use.
Backend active_backend();
// Pin the backend (tests; also honors SSMLAB_KERNELS env at startup).
// Requesting avx2 on a machine without it falls back to scalar.
void force_backend(Backend b);
std::string backend_name();

// out[i] = a[i] + b[i]
void add(const double* a, const double* b, double* out, std::size_t n);
// out[i] = a[i] - b[i]
void sub(const double* a, const double* b, double* out, std::size_t n);
// out[i] = a[i] * b[i]
void mul(const double* a, const double* b, double* out, std::size_t n);
// out[i] = a[i] * b[i] + c[i]
void mul_add(const double* a, const double* b, const double* c, double* out, std::size_t n);
// out[i] = s * a[i]
void scale(const double* a, double s, double* out, std::size_t n);
// y[i] += alpha * x[i]
void axpy(double alpha, const double* x, double* y, std::size_t n);
// sum_i a[i] * b[i]
double dot(const double* a, const double* b, std::size_t n);
// sum_i a[i]
double sum(const double* a, std::size_t n);
// max_i a[i]; n must be >= 1
double max(const double* a, std::size_t n);

// Elementwise transcendental maps. Inputs are clamped to the exp-safe
// range [-745, 709] so finite inputs never produce Inf.
void vexp(const double* a, double* out, std::size_t n);
void vtanh(const double* a, double* out, std::size_t n);
void vsigmoid(const double* a, double* out, std::size_t n);

// Fused row-major matrix kernels (the hot paths of the linear layers).
// out[m,n] (+)= a[m,k] @ b[k,n]           -- accumulate flag selects += vs =
void matmul_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate);
// out[m,k] (+)= a[m,n] @ b[k,n]^T
void matmul_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
               std::size_t k, bool accumulate);
// out[k,n] += a[m,k]^T @ b[m,n]
void matmul_tn_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                   std::size_t n);

// Causal convolution over a length-L sequence of C-channel frames, kernel a
// per-channel vector sequence kc[L,C]:
//   fwd:    y[t,:]  = sum_{m<=t} kc[m,:] . u[t-m,:]
//   bwd_u:  gu[j,:] = sum_m kc[m,:] . gy[j+m,:]
//   bwd_k:  gk[m,:] += sum_j u[j,:] . gy[j+m,:]
void conv_fwd(const double* kc, const double* u, double* y, std::size_t L, std::size_t C);
void conv_bwd_u(const double* kc, const double* gy, double* gu, std::size_t L, std::size_t C);
void conv_bwd_k(const double* u, const double* gy, double* gk, std::size_t L, std::size_t C);

// Same with a scalar kernel g[L] shared across channels.
void conv_scalar_fwd(const double* g, const double* u, double* y, std::size_t L, std::size_t C);
void conv_scalar_bwd_u(const double* g, const double* gy, double* gu, std::size_t L,
                       std::size_t C);
void conv_scalar_bwd_g(const double* u, const double* gy, double* gg, std::size_t L,
                       std::size_t C);

namespace detail {
// Raw implementations, exposed for the equivalence tests.
struct Impl {
  void (*add)(const double*, const double*, double*, std::size_t);
  void (*sub)(const double*, const double*, double*, std::size_t);
  void (*mul)(const double*, const double*, double*, std::size_t);
  void (*mul_add)(const double*, const double*, const double*, double*, std::size_t);
  void (*scale)(const double*, double, double*, std::size_t);
  void (*axpy)(double, const double*, double*, std::size_t);
  double (*dot)(const double*, const double*, std::size_t);
  double (*sum)(const double*, std::size_t);
  double (*max)(const double*, std::size_t);
  void (*vexp)(const double*, double*, std::size_t);
  void (*vtanh)(const double*, double*, std::size_t);
  void (*vsigmoid)(const double*, double*, std::size_t);
  void (*matmul_nn)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t,
                    bool);
  void (*matmul_nt)(const double*, const double*, double*, std::size_t, std::size_t, std::size_t,
                    bool);
  void (*matmul_tn_acc)(const double*, const double*, double*, std::size_t, std::size_t,
                        std::size_t);
  void (*conv_fwd)(const double*, const double*, double*, std::size_t, std::size_t);
  void (*conv_bwd_u)(const double*, const double*, double*, std::size_t, std::size_t);
  void (*conv_bwd_k)(const double*, const double*, double*, std::size_t, std::size_t);
  void (*conv_scalar_fwd)(const double*, const double*, double*, std::size_t, std::size_t);
  void (*conv_scalar_bwd_u)(const double*, const double*, double*, std::size_t, std::size_t);
  void (*conv_scalar_bwd_g)(const double*, const double*, double*, std::size_t, std::size_t);
};
const Impl& scalar_impl();
const Impl* avx2_impl();  // nullptr when unsupported at build or run time
}  // namespace detail

}  // namespace ssmlab::kernels
