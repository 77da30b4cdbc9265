#include "ssmlab/theory/bounds.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "ssmlab/kernels.hpp"
#include "ssmlab/parallel.hpp"

namespace ssmlab::theory {

std::string to_string(NoiseKind k) {
  switch (k) {
    case NoiseKind::constant: return "constant";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::gaussian_truncated: return "gaussian-truncated";
  }
  return "?";
}

NoiseKind noise_kind_from(const std::string& s) {
  if (s == "constant") return NoiseKind::constant;
  if (s == "uniform") return NoiseKind::uniform;
  if (s == "gaussian-truncated") return NoiseKind::gaussian_truncated;
  throw std::invalid_argument("unknown noise kind '" + s + "'");
}

NoiseModel::NoiseModel(double mu_, double M_, NoiseKind kind_) : mu(mu_), M(M_), kind(kind_) {
  if (M < mu * mu)
    throw std::invalid_argument("NoiseModel: M must be >= mu^2 (" + std::to_string(M) + " < " +
                                std::to_string(mu * mu) + ")");
  independent_coords = kind != NoiseKind::constant;
}

void NoiseModel::sample(Rng& rng, double* out, std::size_t n) const {
  switch (kind) {
    case NoiseKind::constant:
      for (std::size_t i = 0; i < n; ++i) out[i] = mu;
      return;
    case NoiseKind::uniform: {
      const double w = std::sqrt(3.0 * (M - mu * mu));
      for (std::size_t i = 0; i < n; ++i) out[i] = mu + rng.uniform(-w, w);
      return;
    }
    case NoiseKind::gaussian_truncated: {
      const double sigma = std::sqrt(M - mu * mu);
      for (std::size_t i = 0; i < n; ++i) {
        double z = rng.normal();
        while (std::fabs(z) > 3.0) z = rng.normal();
        out[i] = mu + sigma * z;
      }
      return;
    }
  }
}

namespace {

std::vector<double> lag_kernel(const ssm::DiscretizedSSM& d, std::int64_t L) {
  if (!d.siso()) throw std::invalid_argument("theory: SISO shapes required");
  return ssm::ssm_kernel(d, L);
}

la::Mat toeplitz_from(const std::vector<double>& g) {
  const std::size_t L = g.size();
  la::Mat H(L, L);
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t j = 0; j <= k; ++j) H(k, j) = g[k - j];
  return H;
}

// Per-step extreme |eigenvalue| magnitudes of Abar.
void spectral_factors(const ssm::DiscretizedSSM& d, std::int64_t L, std::vector<double>& lam_min,
                      std::vector<double>& lam_max) {
  double lo, hi;
  if (d.tag == ssm::ParamTag::diagonal) {
    lo = 1e300;
    hi = 0.0;
    for (auto a : d.abar) {
      lo = std::min(lo, std::abs(a));
      hi = std::max(hi, std::abs(a));
    }
  } else {
    lo = 1e300;
    hi = 0.0;
    for (auto z : la::eig(d.Abar)) {
      lo = std::min(lo, std::abs(z));
      hi = std::max(hi, std::abs(z));
    }
  }
  lam_min.assign(static_cast<std::size_t>(L), lo);
  lam_max.assign(static_cast<std::size_t>(L), hi);
}

double cb_product(const ssm::DiscretizedSSM& d) {
  if (d.tag == ssm::ParamTag::diagonal) {
    ssm::cplx acc = 0.0;
    for (std::size_t s = 0; s < d.abar.size(); ++s) acc += d.cbar[s] * d.bbar[s];
    return acc.real();
  }
  double acc = 0.0;
  for (std::size_t s = 0; s < d.Abar.rows; ++s) acc += d.Cbar(0, s) * d.Bbar(s, 0);
  return acc;
}

BoundReport bounds_from_kernel(const std::vector<double>& g, const std::vector<double>& lam_min,
                               const std::vector<double>& lam_max, const std::vector<double>& cb,
                               std::int64_t h, const NoiseModel& noise) {
  const std::int64_t L = static_cast<std::int64_t>(g.size());
  BoundReport r;
  r.L = L;
  r.h = h;
  r.mu = noise.mu;
  r.M = noise.M;
  auto [c1, c2] = bound_constants(L);
  r.c1 = c1;
  r.c2 = c2;
  double sum_g2 = 0.0;
  for (double v : g) sum_g2 += v * v;
  r.lower = noise.mu * noise.mu * c1 * sum_g2;
  r.upper = c2 * noise.M * sum_g2;
  r.lam_min = lam_min;
  r.lam_max = lam_max;
  double lo = 0.0, hi = 0.0, prod_lo = 1.0, prod_hi = 1.0;
  for (std::int64_t j = 0; j < L; ++j) {
    const double cb2 = cb[static_cast<std::size_t>(j)] * cb[static_cast<std::size_t>(j)];
    lo += prod_lo * cb2;
    hi += prod_hi * cb2;
    prod_lo *= lam_min[static_cast<std::size_t>(j)];
    prod_hi *= lam_max[static_cast<std::size_t>(j)];
  }
  r.lower_factored = noise.mu * noise.mu * c1 * lo;
  r.upper_factored = c2 * noise.M * hi;
  return r;
}

std::pair<double, double> mc_from_kernel(const std::vector<double>& g, const NoiseModel& noise,
                                         std::int64_t n_samples, std::uint64_t seed) {
  if (n_samples < 10000)
    throw std::invalid_argument("mc_error_estimate: n_samples must be >= 10^4");
  const std::size_t L = g.size();
  constexpr std::size_t kShards = 64;
  const std::size_t per = (static_cast<std::size_t>(n_samples) + kShards - 1) / kShards;
  // Per-shard Welford accumulators, merged in shard order afterwards; this is
  // deterministic for any worker count and exact for constant samples.
  std::vector<double> means(kShards, 0.0), m2s(kShards, 0.0);
  std::vector<std::size_t> counts(kShards, 0);
  par::parallel_for(kShards, [&](std::size_t lo, std::size_t hi) {
    std::vector<double> eps(L), y(L);
    for (std::size_t shard = lo; shard < hi; ++shard) {
      Rng rng = Rng::derive(seed, shard);
      const std::size_t begin = shard * per;
      const std::size_t end = std::min(static_cast<std::size_t>(n_samples), begin + per);
      double mean = 0.0, m2 = 0.0;
      std::size_t k = 0;
      for (std::size_t it = begin; it < end; ++it) {
        noise.sample(rng, eps.data(), L);
        std::fill(y.begin(), y.end(), 0.0);
        for (std::size_t j = 0; j < L; ++j) {
          const double e = eps[j];
          if (e != 0.0) kernels::axpy(e, g.data(), y.data() + j, L - j);
        }
        const double sq = kernels::dot(y.data(), y.data(), L);
        ++k;
        const double d1 = sq - mean;
        mean += d1 / static_cast<double>(k);
        m2 += d1 * (sq - mean);
      }
      means[shard] = mean;
      m2s[shard] = m2;
      counts[shard] = k;
    }
  }, 1);
  double mean = 0.0, m2 = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < kShards; ++i) {
    if (counts[i] == 0) continue;
    const double delta = means[i] - mean;
    const std::size_t nn = n + counts[i];
    m2 += m2s[i] + delta * delta * static_cast<double>(n) * static_cast<double>(counts[i]) /
                       static_cast<double>(nn);
    mean += delta * static_cast<double>(counts[i]) / static_cast<double>(nn);
    n = nn;
  }
  const double var = n > 1 ? std::max(0.0, m2 / static_cast<double>(n)) : 0.0;
  const double stderr_ = std::sqrt(var / static_cast<double>(n));
  return {mean, stderr_};
}

}  // namespace

la::Mat build_H(const ssm::DiscretizedSSM& d, std::int64_t L) {
  return toeplitz_from(lag_kernel(d, L));
}

la::Mat build_H(const ssm::StepwiseSSM& d) {
  return toeplitz_from(ssm::stepwise_lag_kernel(d));
}

std::pair<double, double> bound_constants(std::int64_t L) {
  if (L < 1) throw std::invalid_argument("bound_constants: L must be >= 1");
  const std::size_t n = static_cast<std::size_t>(L);
  if (L <= 512) {
    la::Mat ete(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        ete(i, j) = static_cast<double>(n - std::max(i, j));
    auto ev = la::eig_sym(ete);
    return {ev.front(), ev.back()};
  }
  // (E^T E)^-1 = T = tridiag(-1, [1,2,...,2], -1). c2 = 1/lambda_min(T) via
  // inverse iteration (shift 0), c1 = 1/lambda_max(T) via shift 4 (> spec(T)).
  auto thomas = [n](double shift, const std::vector<double>& b) {
    // solve (shift I - T) x = b; diag = shift - t_ii, off = +1
    std::vector<double> c(n), d(n), x(n);
    std::vector<double> diag(n);
    diag[0] = shift - 1.0;
    for (std::size_t i = 1; i < n; ++i) diag[i] = shift - 2.0;
    c[0] = 1.0 / diag[0];
    d[0] = b[0] / diag[0];
    for (std::size_t i = 1; i < n; ++i) {
      const double m = diag[i] - c[i - 1];
      c[i] = 1.0 / m;
      d[i] = (b[i] - d[i - 1]) / m;
    }
    x[n - 1] = d[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
    return x;
  };
  auto inverse_iter = [&](double shift) {
    std::vector<double> v(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i % 7);
    double lambda = 0.0;
    for (int it = 0; it < 200; ++it) {
      auto w = thomas(shift, v);
      const double nrm = std::sqrt(kernels::dot(w.data(), w.data(), n));
      for (auto& x : w) x /= nrm;
      std::vector<double> Tw(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = (i == 0 ? 1.0 : 2.0) * w[i];
        if (i > 0) acc -= w[i - 1];
        if (i + 1 < n) acc -= w[i + 1];
        Tw[i] = acc;
      }
      const double lam = kernels::dot(w.data(), Tw.data(), n);
      v = std::move(w);
      if (it > 3 && std::fabs(lam - lambda) < 1e-14 * std::fabs(lam)) {
        lambda = lam;
        break;
      }
      lambda = lam;
    }
    return lambda;
  };
  const double lam_min_T = inverse_iter(0.0);   // converges to eig nearest 0
  const double lam_max_T = inverse_iter(4.0);   // nearest 4 = largest
  return {1.0 / lam_max_T, 1.0 / lam_min_T};
}

BoundReport theorem1_bounds(const ssm::DiscretizedSSM& d, const NoiseModel& noise,
                            std::int64_t L) {
  auto g = lag_kernel(d, L);
  std::vector<double> lam_min, lam_max;
  spectral_factors(d, L, lam_min, lam_max);
  std::vector<double> cb(static_cast<std::size_t>(L), cb_product(d));
  return bounds_from_kernel(g, lam_min, lam_max, cb, static_cast<std::int64_t>(d.state_dim()),
                            noise);
}

BoundReport theorem1_bounds(const ssm::StepwiseSSM& d, const NoiseModel& noise) {
  auto g = ssm::stepwise_lag_kernel(d);
  const std::size_t L = d.length();
  std::vector<double> lam_min(L), lam_max(L), cb(L);
  for (std::size_t k = 0; k < L; ++k) {
    double lo = 1e300, hi = 0.0, cbk = 0.0;
    for (std::size_t s = 0; s < d.state_dim(); ++s) {
      lo = std::min(lo, std::fabs(d.abar[k][s]));
      hi = std::max(hi, std::fabs(d.abar[k][s]));
      cbk += d.cbar[k][s] * d.bbar[k][s];
    }
    lam_min[k] = lo;
    lam_max[k] = hi;
    cb[k] = cbk;
  }
  return bounds_from_kernel(g, lam_min, lam_max, cb, static_cast<std::int64_t>(d.state_dim()),
                            noise);
}

std::pair<double, double> mc_error_estimate(const ssm::DiscretizedSSM& d, const NoiseModel& noise,
                                            std::int64_t L, std::int64_t n_samples,
                                            std::uint64_t seed) {
  return mc_from_kernel(lag_kernel(d, L), noise, n_samples, seed);
}

std::pair<double, double> mc_error_estimate(const ssm::StepwiseSSM& d, const NoiseModel& noise,
                                            std::int64_t n_samples, std::uint64_t seed) {
  return mc_from_kernel(ssm::stepwise_lag_kernel(d), noise, n_samples, seed);
}

void attach_mc(BoundReport& r, const ssm::DiscretizedSSM& d, const NoiseModel& noise,
               std::int64_t n_samples, std::uint64_t seed) {
  auto [est, se] = mc_error_estimate(d, noise, r.L, n_samples, seed);
  r.mc_estimate = est;
  r.mc_stderr = se;
  r.n_samples = n_samples;
  r.seed = seed;
}

std::string format_report(const BoundReport& r) {
  char buf[64];
  std::string s;
  auto put = [&](const char* key, double v) {
    std::snprintf(buf, sizeof(buf), "%s = %.17g\n", key, v);
    s += buf;
  };
  s += "L = " + std::to_string(r.L) + "\n";
  s += "h = " + std::to_string(r.h) + "\n";
  put("mu", r.mu);
  put("M", r.M);
  put("c1", r.c1);
  put("c2", r.c2);
  put("lower", r.lower);
  put("upper", r.upper);
  put("lower_factored", r.lower_factored);
  put("upper_factored", r.upper_factored);
  if (r.mc_estimate) {
    put("mc_estimate", *r.mc_estimate);
    put("mc_stderr", *r.mc_stderr);
    s += "n_samples = " + std::to_string(r.n_samples) + "\n";
    s += "seed = " + std::to_string(r.seed) + "\n";
  }
  return s;
}

}  // namespace ssmlab::theory
