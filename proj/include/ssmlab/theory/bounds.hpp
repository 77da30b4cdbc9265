#pragma once
// Output-error bound machinery for SISO SSMs under input perturbation:
// the unrolled lower-triangular operator H (y = H u), the extreme
// eigenvalues c1/c2 of E^T E (E = all-ones lower triangular), the
// upper/lower error bounds, and a Monte Carlo verification oracle.
//
// Two bound forms are computed. The proof form keeps the full products
//   g_j = Cbar_j [prod_{i<j} Abar_i] Bbar_j:
//     lower = mu^2 c1 sum_j g_j^2,   upper = c2 M sum_j g_j^2,
// and is the pair the sandwich verification asserts against (the upper side
// additionally requires independent coordinates or constant noise, which
// every shipped noise model satisfies). The factored form replaces g_j^2 by
// [prod_{i<j} |lam_i^min|] (Cbar_j Bbar_j)^2 (resp. lam^max) and is reported
// alongside; it is not a valid sandwich in general and is not asserted.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ssmlab/linalg.hpp"
#include "ssmlab/rng.hpp"
#include "ssmlab/ssm/core.hpp"

namespace ssmlab::theory {

enum class NoiseKind { constant, uniform, gaussian_truncated };

std::string to_string(NoiseKind k);
NoiseKind noise_kind_from(const std::string& s);

// Perturbation model with E[eps_k] = mu and E[eps_k^2] <= M by construction:
//   constant:            eps = mu                    (M >= mu^2 checked)
//   uniform:             mu + U[-w, w], w = sqrt(3(M - mu^2))  (E[eps^2] = M)
//   gaussian_truncated:  mu + sigma z, z ~ N(0,1) rejected outside |z| <= 3,
//                        sigma = sqrt(M - mu^2)      (E[eps^2] < M)
struct NoiseModel {
  double mu = 0.0;
  double M = 0.0;
  NoiseKind kind = NoiseKind::uniform;
  bool independent_coords = true;  // false only for `constant`

  NoiseModel(double mu_, double M_, NoiseKind kind_);
  void sample(Rng& rng, double* out, std::size_t n) const;
};

// H[k][j] = g_{k-j+1} (1-indexed), g_m = Cbar_m [prod_{i<m} Abar_i] Bbar_m;
// Toeplitz built from the kernel. SISO required (throws otherwise).
la::Mat build_H(const ssm::DiscretizedSSM& d, std::int64_t L);
la::Mat build_H(const ssm::StepwiseSSM& d);

// Extreme eigenvalues of E^T E. Dense symmetric eigensolver up to L = 512;
// beyond that, inverse/shifted-inverse power iteration on the tridiagonal
// (E^T E)^-1 = tridiag(-1, [1,2,...,2], -1).
std::pair<double, double> bound_constants(std::int64_t L);  // (c1, c2)

struct BoundReport {
  std::int64_t L = 0;
  std::int64_t h = 0;
  double mu = 0.0, M = 0.0;
  double c1 = 0.0, c2 = 0.0;
  double lower = 0.0, upper = 0.0;                  // proof form (asserted)
  double lower_factored = 0.0, upper_factored = 0.0;  // printed factored form
  std::vector<double> lam_min, lam_max;             // per-step |eig| extremes
  std::optional<double> mc_estimate, mc_stderr;
  std::int64_t n_samples = 0;
  std::uint64_t seed = 0;
};

BoundReport theorem1_bounds(const ssm::DiscretizedSSM& d, const NoiseModel& noise, std::int64_t L);
BoundReport theorem1_bounds(const ssm::StepwiseSSM& d, const NoiseModel& noise);

// Unbiased estimate of E ||y' - y||^2 = E ||H eps||^2 with sample standard
// error. Deterministic for a given seed: sampling is sharded into fixed
// blocks whose substreams derive from the seed, merged in block order.
// Requires n_samples >= 10^4.
std::pair<double, double> mc_error_estimate(const ssm::DiscretizedSSM& d, const NoiseModel& noise,
                                            std::int64_t L, std::int64_t n_samples,
                                            std::uint64_t seed);
std::pair<double, double> mc_error_estimate(const ssm::StepwiseSSM& d, const NoiseModel& noise,
                                            std::int64_t n_samples, std::uint64_t seed);

// Fill the MC fields of an existing report.
void attach_mc(BoundReport& r, const ssm::DiscretizedSSM& d, const NoiseModel& noise,
               std::int64_t n_samples, std::uint64_t seed);

// Structured text record, one "key = value" per line; floats at 17 digits.
std::string format_report(const BoundReport& r);

// The conditioning diagnostic lives with the discretizations; re-exported
// here as part of this module's surface.
using ssm::conditioning_report;
using ssm::ConditioningReport;

}  // namespace ssmlab::theory
