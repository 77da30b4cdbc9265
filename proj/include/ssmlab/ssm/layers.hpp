#pragma once
// Differentiable SSM building blocks. The scan/convolution/discretization
// primitives here carry hand-derived adjoints and are finite-difference
// checked in the tests; the layer compositions at the bottom are what the
// model zoo assembles into blocks.

#include <utility>

#include "ssmlab/ops.hpp"
#include "ssmlab/ssm/core.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab::ssm {

using ad::Tensor;

// y[b,t,c] = sum_{m<=t} k[m,c] u[b,t-m,c]. u: [B,L,C], k: [L,C].
Tensor causal_conv_fixed(const Tensor& u, const Tensor& k);

// Per-sample scalar kernel: y[b,t,c] = sum_m g[b,m] u[b,t-m,c]. g: [B,L].
Tensor causal_conv_var(const Tensor& u, const Tensor& g);

// x[b,0,:] = u[b,0,:]; x[b,l,:] = a (.) x[b,l-1,:] + u[b,l,:]. a: [C].
// `parallel` evaluates each lane with the work-efficient associative scan
// instead of the sequential loop (same result within roundoff).
Tensor diag_recurrence(const Tensor& a, const Tensor& u, bool parallel = false);

// Complex variant on (re, im) pairs; a = ar + i ai is length C.
std::pair<Tensor, Tensor> cdiag_recurrence(const Tensor& ar, const Tensor& ai, const Tensor& ur,
                                           const Tensor& ui, bool parallel = false);

// K[m, c] = C[c, :] . Abar^m . Bbar, m = 0..L-1. Abar: [h,h], Bbar: [h],
// Cmat: [d,h].
Tensor dense_power_kernel(const Tensor& Abar, const Tensor& Bbar, const Tensor& Cmat,
                          std::int64_t L);

// Abar = (I - dt/2 A)^-1 (I + dt/2 A), Bbar = (I - dt/2 A)^-1 dt b.
std::pair<Tensor, Tensor> bilinear_disc_dense(const Tensor& A, const Tensor& b, double dt);

// --- complex pair helpers (re/im composed from real ops) -------------------

struct CPair {
  Tensor re, im;
};
CPair cmul(const CPair& a, const CPair& b);
CPair cdiv(const CPair& a, const CPair& b);
CPair cexp(const CPair& a);
CPair cadd_scalar(const CPair& a, double re);
CPair cscale(const CPair& a, double s);

// --- layers -----------------------------------------------------------------

enum class Activation { relu, sigmoid, tanh };
Activation activation_from(const std::string& name);
std::string to_string(Activation a);
Tensor apply_activation(Activation a, const Tensor& x);

// Adaptive scaling y_k <- act(L1(y_k)) (.) y_k + act(L2(y_k)).
struct AdsLayer {
  Tensor w1, b1, w2, b2;  // [d,d], [d]
  Activation act = Activation::relu;
  Tensor forward(const Tensor& y) const;  // y: [B,L,d]
};

// Multi-dimensional damped EMA, d channels, h-dim state per channel.
// alpha = sigmoid(alpha_raw), delta = sigmoid(delta_raw) keep the equivalent
// SSM diagonal 1 - alpha.delta inside [0,1).
struct EmaLayer {
  Tensor alpha_raw, delta_raw, beta, eta;  // each [d*h] flat, channel-major
  std::int64_t d = 0, h = 0;
  Tensor forward(const Tensor& u) const;  // u: [B,L,d] -> [B,L,d]
  EMAParams freeze() const;               // numeric snapshot for the oracle
};

// Single-head scaled dot-product attention between the SSM output y and the
// block input u: queries/keys from y, values from u, residual back onto y.
// No causal mask (classification setting); the softmax row-normalization is
// the "Softmax" stage of the Mega block.
struct AttentionLayer {
  Tensor wq, wk, wv;  // [d,d]
  Tensor forward(const Tensor& y, const Tensor& u) const;
};

// Data-dependent (selective) SSM over C channels with shared per-step
// parameters: dt_k = softplus(x_k . w_dt + b_dt) (scalar per step),
// B_k = x_k W_B, C_k = x_k W_C (length h), lambda = -exp(lambda_log) shared.
// The generalized lag-kernel semantics are used: the per-sample kernel is
// g_m = C_m . (prod_{i<m} exp(lambda dt_i)) . (dt_m phi1(lambda dt_m) B_m)
// and y = g * x (causal convolution, kernel shared across channels).
struct S6Layer {
  Tensor w_dt, b_dt;   // [C,1], [1]
  Tensor w_B, w_C;     // [C,h]
  Tensor lambda_log;   // [h]
  Tensor forward(const Tensor& x) const;  // x: [B,L,C]
  // Frozen per-step parameter triples for one sample (numeric; theory path).
  StepwiseSSM freeze(const Tensor& x, std::int64_t batch_index) const;
};

}  // namespace ssmlab::ssm
