#include "ssmlab/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace ssmlab::kernels {
namespace {

using detail::Impl;

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma") &&
         detail::avx2_impl() != nullptr;
#else
  return false;
#endif
}

Backend resolve_initial() {
  if (const char* env = std::getenv("SSMLAB_KERNELS")) {
    if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
    if (std::strcmp(env, "avx2") == 0 && avx2_supported()) return Backend::avx2;
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

std::atomic<const Impl*> g_impl{nullptr};
std::atomic<Backend> g_backend{Backend::scalar};

const Impl* impl() {
  const Impl* p = g_impl.load(std::memory_order_acquire);
  if (p) return p;
  Backend b = resolve_initial();
  p = b == Backend::avx2 ? detail::avx2_impl() : &detail::scalar_impl();
  g_backend.store(b, std::memory_order_relaxed);
  g_impl.store(p, std::memory_order_release);
  return p;
}

}  // namespace

Backend active_backend() {
  impl();
  return g_backend.load(std::memory_order_relaxed);
}

void force_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported()) b = Backend::scalar;
  g_backend.store(b, std::memory_order_relaxed);
  g_impl.store(b == Backend::avx2 ? detail::avx2_impl() : &detail::scalar_impl(),
               std::memory_order_release);
}

std::string backend_name() {
  return active_backend() == Backend::avx2 ? "avx2" : "scalar";
}

void add(const double* a, const double* b, double* out, std::size_t n) { impl()->add(a, b, out, n); }
void sub(const double* a, const double* b, double* out, std::size_t n) { impl()->sub(a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { impl()->mul(a, b, out, n); }
void mul_add(const double* a, const double* b, const double* c, double* out, std::size_t n) {
  impl()->mul_add(a, b, c, out, n);
}
void scale(const double* a, double s, double* out, std::size_t n) { impl()->scale(a, s, out, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { impl()->axpy(alpha, x, y, n); }
double dot(const double* a, const double* b, std::size_t n) { return impl()->dot(a, b, n); }
double sum(const double* a, std::size_t n) { return impl()->sum(a, n); }
double max(const double* a, std::size_t n) { return impl()->max(a, n); }
void vexp(const double* a, double* out, std::size_t n) { impl()->vexp(a, out, n); }
void vtanh(const double* a, double* out, std::size_t n) { impl()->vtanh(a, out, n); }
void vsigmoid(const double* a, double* out, std::size_t n) { impl()->vsigmoid(a, out, n); }

}  // namespace ssmlab::kernels

namespace ssmlab::kernels {

void matmul_nn(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
               std::size_t n, bool accumulate) {
  impl()->matmul_nn(a, b, out, m, k, n, accumulate);
}
void matmul_nt(const double* a, const double* b, double* out, std::size_t m, std::size_t n,
               std::size_t k, bool accumulate) {
  impl()->matmul_nt(a, b, out, m, n, k, accumulate);
}
void matmul_tn_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k,
                   std::size_t n) {
  impl()->matmul_tn_acc(a, b, out, m, k, n);
}
void conv_fwd(const double* kc, const double* u, double* y, std::size_t L, std::size_t C) {
  impl()->conv_fwd(kc, u, y, L, C);
}
void conv_bwd_u(const double* kc, const double* gy, double* gu, std::size_t L, std::size_t C) {
  impl()->conv_bwd_u(kc, gy, gu, L, C);
}
void conv_bwd_k(const double* u, const double* gy, double* gk, std::size_t L, std::size_t C) {
  impl()->conv_bwd_k(u, gy, gk, L, C);
}
void conv_scalar_fwd(const double* g, const double* u, double* y, std::size_t L, std::size_t C) {
  impl()->conv_scalar_fwd(g, u, y, L, C);
}
void conv_scalar_bwd_u(const double* g, const double* gy, double* gu, std::size_t L,
                       std::size_t C) {
  impl()->conv_scalar_bwd_u(g, gy, gu, L, C);
}
void conv_scalar_bwd_g(const double* u, const double* gy, double* gg, std::size_t L,
                       std::size_t C) {
  impl()->conv_scalar_bwd_g(u, gy, gg, L, C);
}

}  // namespace ssmlab::kernels
