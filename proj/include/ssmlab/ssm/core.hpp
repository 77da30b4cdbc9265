#pragma once
// State-space model parameter bundles, discretization routines, and the
// reference scan/kernel evaluators. Everything here is plain numeric code
// (no autodiff); the trainable layers in ssm/layers.hpp are implemented
// independently and cross-checked against these in the tests.
//
// Diagonal systems carry complex state; outputs take the real part at the
// output projection. Real-only systems just have zero imaginary parts.

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "ssmlab/linalg.hpp"

namespace ssmlab::ssm {

using cplx = std::complex<double>;

enum class ParamTag { dense, diagonal };
enum class DiscTag { bilinear, zoh, dss_eq7 };

std::string to_string(ParamTag t);
std::string to_string(DiscTag t);
ParamTag param_tag_from(const std::string& s);
DiscTag disc_tag_from(const std::string& s);

// Continuous-time parameters. Dense systems use A/B/C matrices; diagonal
// systems use lambda plus complex SISO b/c vectors (length h).
struct SSMParams {
  ParamTag tag = ParamTag::diagonal;
  double dt = 1.0;
  // dense
  la::Mat A;  // h x h
  la::Mat B;  // h x d
  la::Mat C;  // o x h
  // diagonal (SISO)
  std::vector<cplx> lambda;
  std::vector<cplx> b;
  std::vector<cplx> c;

  std::size_t state_dim() const { return tag == ParamTag::dense ? A.rows : lambda.size(); }
};

struct DiscretizedSSM {
  ParamTag tag = ParamTag::diagonal;
  DiscTag disc = DiscTag::zoh;
  std::int64_t L = 0;  // meaningful for dss_eq7 only
  // dense
  la::Mat Abar, Bbar, Cbar;
  // diagonal (SISO)
  std::vector<cplx> abar, bbar, cbar;

  std::size_t state_dim() const { return tag == ParamTag::dense ? Abar.rows : abar.size(); }
  bool siso() const;
};

// Frozen per-step diagonal SISO parameter sequence (data-dependent scans).
// abar[k], bbar[k], cbar[k] each have length h, k = 0..L-1.
struct StepwiseSSM {
  std::vector<std::vector<double>> abar, bbar, cbar;
  std::size_t length() const { return abar.size(); }
  std::size_t state_dim() const { return abar.empty() ? 0 : abar[0].size(); }
};

// Multi-dimensional damped EMA, d channels with h-dimensional state each.
// alpha/delta must lie in (0,1]; the equivalent SSM diagonal is 1-alpha*delta.
struct EMAParams {
  la::Mat alpha, delta, beta, eta;  // each d x h
  std::size_t channels() const { return alpha.rows; }
  std::size_t state_dim() const { return alpha.cols; }
};

// --- Discretization -------------------------------------------------------

// Eqs: Abar = (I - dt/2 A)^-1 (I + dt/2 A), Bbar = (I - dt/2 A)^-1 dt B.
// Throws std::runtime_error with a condition estimate when (I - dt/2 A) is
// singular to working precision.
DiscretizedSSM bilinear_discretize(const SSMParams& p);

// Abar = exp(A dt); Bbar = (Abar - I) A^-1 B. Diagonal entries with
// |lambda dt| < 1e-8 use the series limit Bbar -> dt*B. Dense singular A
// throws.
DiscretizedSSM zoh_discretize(const SSMParams& p);

// Diagonal instantiation with the sequence-length-dependent input scaling:
// abar_i = exp(lambda_i dt), bbar_i = (exp(lambda_i dt)-1) /
// (lambda_i (exp(L lambda_i dt)-1)); cbar = 1. A vanishing denominator
// (exp(L lambda dt) = 1 away from the small-|lambda dt| series branch)
// throws naming the channel.
DiscretizedSSM dss_instantiate(const std::vector<cplx>& lambda, double dt, std::int64_t L);

struct ConditioningReport {
  double kappa = 0.0;         // cond_1(dt*A)
  double min_abs_eig = 0.0;   // min |eig(dt*A)|
  double inv_scale = 0.0;     // 1 / min_abs_eig: magnitude of the inverse op
  double bbar_norm = 0.0;     // ||(exp(A dt)-I) A^-1 B||_F with B = ones
  bool flagged = false;       // kappa > 1e8 or inv_scale > 1e8
};
// Measurable proxy for the ZOH inversion conditioning discussed alongside
// data-dependent step sizes. Singular A reports kappa = inf.
ConditioningReport conditioning_report(double dt, const la::Mat& A);

constexpr double kConditionFlagThreshold = 1e8;

// --- Reference evaluators ---------------------------------------------------

struct ScanResult {
  std::vector<double> y;                    // output sequence, length L
  std::vector<std::vector<cplx>> states;    // per-step state (fixed-parameter
                                            // case) or per-lag weight vectors
                                            // (stepwise case)
};

// Kernel (C B, C Abar B, ..., C Abar^{L-1} B) with real-part extraction for
// complex diagonal systems. SISO only.
std::vector<double> ssm_kernel(const DiscretizedSSM& d, std::int64_t L);

// Causal convolution y_k = sum_{j<=k} K_{k-j} u_j; lengths must match.
std::vector<double> conv_apply(const std::vector<double>& kernel, const std::vector<double>& u);

// Exact recurrence x_k = Abar x_{k-1} + Bbar u_k, y_k = Re(Cbar x_k), x_0 = 0.
ScanResult sequential_scan(const DiscretizedSSM& d, const std::vector<double>& u);

// The generalized (lag-indexed) form: coefficient of u_j in y_k is
// g_{k-j+1} with g_m = c_m . (prod_{i<m} a_i) . b_m, matching the H matrix.
// Fixed-parameter sequences reduce this to the plain recurrence.
ScanResult sequential_scan(const StepwiseSSM& d, const std::vector<double>& u);

// Lag kernel g of the stepwise system (length L).
std::vector<double> stepwise_lag_kernel(const StepwiseSSM& d);

// Diagonal-only associative scan (Blelloch). Throws on dense input.
std::vector<double> parallel_scan(const DiscretizedSSM& d, const std::vector<double>& u);

// The scan monoid: (a1,b1) o (a2,b2) = (a2*a1, a2*b1 + b2); identity (1,0).
std::pair<cplx, cplx> scan_combine(const std::pair<cplx, cplx>& e1, const std::pair<cplx, cplx>& e2);

// In-place inclusive Blelloch scan of (a,b) pairs under scan_combine.
void blelloch_inclusive(std::vector<std::pair<cplx, cplx>>& e);

// EMA recurrence x_k = alpha.(beta u_k) + (1-alpha.delta).x_{k-1},
// y_k = eta^T x_k, per channel. u is [L x d] row-major; returns [L x d].
std::vector<double> ema_scan(const EMAParams& p, const std::vector<double>& u, std::size_t L);

// Equivalent SISO SSM of one EMA channel: A = diag(1-alpha.delta),
// B = alpha.beta, C = eta^T.
DiscretizedSSM ema_to_ssm(const EMAParams& p, std::size_t channel);

// --- Parameter dump/load ----------------------------------------------------
// Structured text, one "key = value" per line:
//   param_tag = dense|diagonal
//   disc_tag  = bilinear|zoh|dss_eq7      (continuous bundles write "none")
//   h = <int>, d = <int>, dt = <float>, L = <int, dss_eq7 only>
//   lambda = re,im re,im ...              (diagonal)
//   A|B|C = row-major floats, rows separated by ';'
//   b|c    = re,im pairs                  (diagonal)
// Floats use 17 significant digits; '#' starts a comment line.
std::string dump_params(const SSMParams& p);
SSMParams load_params(const std::string& text);

}  // namespace ssmlab::ssm
