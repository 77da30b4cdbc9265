#pragma once
// Differentiable primitives. All shapes are row-major; the trailing axis is
// contiguous. Broadcasting is deliberately limited to the patterns the models
// need (scalars, and per-trailing-axis bias/gain).

#include "ssmlab/tensor.hpp"

namespace ssmlab::ad {

// Elementwise, same shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// Elementwise quotient; caller guarantees the denominator stays away from 0.
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

// x[..., d] + b[d]  /  x[..., d] * g[d]
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor mul_gain(const Tensor& x, const Tensor& g);

// Activations (elementwise).
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
// GeLU, tanh form: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
// This is the single canonical GeLU definition used everywhere in this repo.
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor sin_op(const Tensor& x);
Tensor cos_op(const Tensor& x);
Tensor softplus(const Tensor& x);
// phi1(x) = (exp(x)-1)/x with a Taylor branch below |x| < 1e-8 (value -> 1).
Tensor phi1(const Tensor& x);

// x[m,k] @ w[k,n].
Tensor matmul(const Tensor& x, const Tensor& w);
// Batched: a[B,m,k] @ b[B,k,n]; trans_b swaps b's last two axes (b[B,n,k]).
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);

// View with identical element count.
Tensor reshape(const Tensor& x, Shape shape);
// Slice along the trailing axis.
Tensor slice_last(const Tensor& x, std::int64_t start, std::int64_t len);
// x[..., d] -> [..., d*times] with out[..., c*times + s] = x[..., c].
Tensor repeat_last(const Tensor& x, std::int64_t times);

// Softmax along `axis` with max subtraction.
Tensor softmax(const Tensor& x, int axis);

// Mean over batch of -log softmax(logits)[label]. labels in [0, K).
Tensor cross_entropy(const Tensor& logits, const std::vector<std::int64_t>& labels);

enum class KlInput { logits, probabilities };
// Row-wise KL(p || q) = sum_j p_j (ln p_j - ln q_j) along the trailing axis;
// returns one value per row. Probabilities are floored at 1e-12 (after the
// softmax in logits mode). Negative probability input throws.
Tensor kl_div_rows(const Tensor& p_in, const Tensor& q_in, KlInput kind);

// Per-position normalization over the trailing axis, then affine:
// gamma * (x - mean)/sqrt(var + eps) + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// x[B,L,d] -> [B,d], mean over axis 1.
Tensor mean_axis1(const Tensor& x);
// x[..., h] -> [...], sum over trailing axis.
Tensor sum_last(const Tensor& x);
// x[..., d*h] -> [..., d]: sums consecutive groups of h along the last axis.
Tensor sum_groups(const Tensor& x, std::int64_t h);
// Cumulative sum along axis 1 of x[B,L,C]; exclusive leaves y[:,0,:] = 0.
Tensor cumsum_seq(const Tensor& x, bool exclusive);

}  // namespace ssmlab::ad
