#include <doctest.h>

#include <cmath>
#include <complex>

#include "ssmlab/gradcheck.hpp"
#include "ssmlab/linalg.hpp"
#include "ssmlab/ops.hpp"
#include "ssmlab/rng.hpp"
#include "ssmlab/ssm/core.hpp"
#include "ssmlab/ssm/layers.hpp"
#include "ssmlab/model/model.hpp"

using namespace ssmlab;
using namespace ssmlab::ssm;
using ad::Tensor;

namespace {

std::vector<double> rvec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

Tensor rparam(ad::Shape s, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(ad::numel(s)));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor::param(std::move(s), std::move(v));
}

// Random stable diagonal SISO system (complex modes in conjugate-free form;
// output takes real parts so any diag works).
DiscretizedSSM random_diag(Rng& rng, std::size_t h, double max_mag = 0.95, bool complex_modes = true) {
  DiscretizedSSM d;
  d.tag = ParamTag::diagonal;
  for (std::size_t s = 0; s < h; ++s) {
    const double mag = rng.uniform(0.05, max_mag);
    const double ph = complex_modes ? rng.uniform(0.0, 6.283185307179586) : 0.0;
    d.abar.emplace_back(mag * std::cos(ph), mag * std::sin(ph));
    d.bbar.emplace_back(rng.uniform(-1.0, 1.0), complex_modes ? rng.uniform(-1.0, 1.0) : 0.0);
    d.cbar.emplace_back(rng.uniform(-1.0, 1.0), complex_modes ? rng.uniform(-1.0, 1.0) : 0.0);
  }
  return d;
}

}  // namespace

TEST_CASE("bilinear: A = 0 gives Abar = I, Bbar = dt B") {
  SSMParams p;
  p.tag = ParamTag::dense;
  p.dt = 0.37;
  p.A = la::Mat(3, 3);
  p.B = la::Mat(3, 1);
  p.B(0, 0) = 1.0; p.B(1, 0) = -2.0; p.B(2, 0) = 0.5;
  p.C = la::Mat(1, 3, 1.0);
  auto d = bilinear_discretize(p);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      CHECK(d.Abar(i, j) == doctest::Approx(i == j ? 1.0 : 0.0).epsilon(1e-14));
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(d.Bbar(i, 0) == doctest::Approx(p.dt * p.B(i, 0)).epsilon(1e-14));
}

TEST_CASE("bilinear: scalar a=-1, dt=1, b=1 -> Abar=1/3, Bbar=2/3") {
  SSMParams p;
  p.tag = ParamTag::diagonal;
  p.dt = 1.0;
  p.lambda = {cplx(-1.0, 0.0)};
  p.b = {cplx(1.0, 0.0)};
  p.c = {cplx(1.0, 0.0)};
  auto d = bilinear_discretize(p);
  CHECK(d.abar[0].real() == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(d.bbar[0].real() == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("bilinear: stable A gives |eig(Abar)| < 1 (eigensolver oracle, 100 cases)") {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t h = 2 + rng.uniform_u64(5);
    SSMParams p;
    p.tag = ParamTag::dense;
    p.dt = rng.uniform(0.05, 2.0);
    p.A = la::Mat(h, h);
    for (auto& v : p.A.a) v = rng.uniform(-1.0, 1.0);
    double max_re = -1e300;
    for (auto z : la::eig(p.A)) max_re = std::max(max_re, z.real());
    for (std::size_t i = 0; i < h; ++i) p.A(i, i) -= max_re + 0.05;  // shift stable
    p.B = la::Mat(h, 1, 1.0);
    p.C = la::Mat(1, h, 1.0);
    auto d = bilinear_discretize(p);
    for (auto z : la::eig(d.Abar)) CHECK(std::abs(z) < 1.0);
  }
}

TEST_CASE("bilinear: singular (I - dt/2 A) raises with condition estimate") {
  SSMParams p;
  p.tag = ParamTag::dense;
  p.dt = 2.0;  // I - A at dt=2; pick A = I so F = 0
  p.A = la::Mat::identity(2);
  p.B = la::Mat(2, 1, 1.0);
  p.C = la::Mat(1, 2, 1.0);
  CHECK_THROWS_AS((void)bilinear_discretize(p), std::runtime_error);
}

TEST_CASE("zoh: lambda=-1, dt=ln2 -> Abar=0.5, Bbar=0.5") {
  SSMParams p;
  p.tag = ParamTag::diagonal;
  p.dt = std::log(2.0);
  p.lambda = {cplx(-1.0, 0.0)};
  p.b = {cplx(1.0, 0.0)};
  p.c = {cplx(1.0, 0.0)};
  auto d = zoh_discretize(p);
  CHECK(d.abar[0].real() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(d.bbar[0].real() == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("zoh: A -> 0 series limit gives Abar = 1, Bbar = dt b") {
  SSMParams p;
  p.tag = ParamTag::diagonal;
  p.dt = 0.25;
  p.lambda = {cplx(1e-12, 0.0), cplx(0.0, 0.0)};
  p.b = {cplx(3.0, 0.0), cplx(-1.0, 0.0)};
  p.c = {cplx(1.0, 0.0), cplx(1.0, 0.0)};
  auto d = zoh_discretize(p);
  for (int i = 0; i < 2; ++i) {
    CHECK(d.abar[i].real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(d.bbar[i].real() == doctest::Approx(p.dt * p.b[i].real()).epsilon(1e-10));
  }
  // dense zero A must throw instead
  SSMParams q;
  q.tag = ParamTag::dense;
  q.dt = 0.25;
  q.A = la::Mat(2, 2);
  q.B = la::Mat(2, 1, 1.0);
  q.C = la::Mat(1, 2, 1.0);
  CHECK_THROWS_AS((void)zoh_discretize(q), std::runtime_error);
}

TEST_CASE("zoh exact for diagonal: abar = exp(lambda dt) to the ulp") {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    SSMParams p;
    p.tag = ParamTag::diagonal;
    p.dt = rng.uniform(0.01, 2.0);
    p.lambda = {cplx(rng.uniform(-3.0, -0.01), rng.uniform(-2.0, 2.0))};
    p.b = {cplx(1.0, 0.0)};
    p.c = {cplx(1.0, 0.0)};
    auto d = zoh_discretize(p);
    CHECK(d.abar[0] == std::exp(p.lambda[0] * p.dt));
  }
}

TEST_CASE("dss_instantiate: lambda=1, dt=ln2, L=2 -> abar=2, bbar=1/3") {
  auto d = dss_instantiate({cplx(1.0, 0.0)}, std::log(2.0), 2);
  CHECK(d.abar[0].real() == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(d.bbar[0].real() == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("dss_instantiate: lambda dt -> 0 series limit bbar -> 1/(lambda L)") {
  // lambda = 1: bbar -> 1/L
  for (std::int64_t L : {2, 7, 64}) {
    auto d = dss_instantiate({cplx(1.0, 0.0)}, 1e-10, L);
    CHECK(d.bbar[0].real() == doctest::Approx(1.0 / static_cast<double>(L)).epsilon(1e-7));
  }
  auto d2 = dss_instantiate({cplx(2.5, 0.0)}, 1e-10, 8);
  CHECK(d2.bbar[0].real() == doctest::Approx(1.0 / (2.5 * 8.0)).epsilon(1e-7));
  // exactly zero lambda errors, naming the channel
  CHECK_THROWS_WITH_AS((void)dss_instantiate({cplx(0.0, 0.0)}, 0.1, 4),
                       doctest::Contains("channel 0"), std::runtime_error);
}

TEST_CASE("dss model output finite for Re(lambda)<0 up to L=4096") {
  Rng rng(9);
  for (std::int64_t L : {16, 512, 4096}) {
    std::vector<cplx> lambda;
    for (int s = 0; s < 4; ++s) lambda.emplace_back(rng.uniform(-2.0, -0.01), rng.uniform(-3.0, 3.0));
    auto d = dss_instantiate(lambda, 0.05, L);
    d.cbar.assign(4, cplx(1.0, 0.5));
    auto u = rvec(static_cast<std::size_t>(L), rng);
    auto k = ssm_kernel(d, L);
    auto y = conv_apply(k, u);
    for (double v : y) CHECK(std::isfinite(v));
  }
}

TEST_CASE("ssm_kernel anchors") {
  DiscretizedSSM d;
  d.tag = ParamTag::diagonal;
  d.abar = {cplx(0.5, 0.0)};
  d.bbar = {cplx(1.0, 0.0)};
  d.cbar = {cplx(1.0, 0.0)};
  auto k = ssm_kernel(d, 3);
  CHECK(k[0] == doctest::Approx(1.0));
  CHECK(k[1] == doctest::Approx(0.5));
  CHECK(k[2] == doctest::Approx(0.25));

  d.abar = {cplx(0.0, 0.0)};
  auto k0 = ssm_kernel(d, 4);
  CHECK(k0[0] == doctest::Approx(1.0));
  for (int i = 1; i < 4; ++i) CHECK(k0[i] == 0.0);
}

TEST_CASE("conv_apply anchors and O(L^2) direct-sum oracle") {
  std::vector<double> u{1.5, -2.0, 3.0};
  auto y_id = conv_apply({1, 0, 0}, u);
  CHECK(y_id == u);
  auto y_sh = conv_apply({0, 1, 0}, u);
  CHECK(y_sh[0] == 0.0);
  CHECK(y_sh[1] == doctest::Approx(1.5));
  CHECK(y_sh[2] == doctest::Approx(-2.0));
  CHECK_THROWS_AS((void)conv_apply({1, 0}, u), std::invalid_argument);

  Rng rng(31);
  for (int t = 0; t < 20; ++t) {
    const std::size_t L = 1 + rng.uniform_u64(64);
    auto k = rvec(L, rng), x = rvec(L, rng);
    auto y = conv_apply(k, x);
    for (std::size_t i = 0; i < L; ++i) {
      double direct = 0.0;
      for (std::size_t j = 0; j <= i; ++j) direct += k[i - j] * x[j];
      CHECK(std::fabs(y[i] - direct) < 1e-12);
    }
  }
}

TEST_CASE("sequential_scan: zero input, unrolled L=2, linearity") {
  DiscretizedSSM d;
  d.tag = ParamTag::diagonal;
  d.abar = {cplx(0.7, 0.0)};
  d.bbar = {cplx(1.3, 0.0)};
  d.cbar = {cplx(-0.4, 0.0)};
  auto r0 = sequential_scan(d, std::vector<double>(5, 0.0));
  for (double v : r0.y) CHECK(v == 0.0);

  std::vector<double> u{2.0, -1.0};
  auto r = sequential_scan(d, u);
  const double cb = -0.4 * 1.3;
  CHECK(r.y[0] == doctest::Approx(cb * 2.0));
  CHECK(r.y[1] == doctest::Approx(cb * 0.7 * 2.0 + cb * -1.0));

  Rng rng(17);
  for (int t = 0; t < 20; ++t) {
    auto dd = random_diag(rng, 4);
    auto ua = rvec(32, rng), ub = rvec(32, rng);
    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    std::vector<double> mix(32);
    for (int i = 0; i < 32; ++i) mix[i] = a * ua[i] + b * ub[i];
    auto ya = sequential_scan(dd, ua).y;
    auto yb = sequential_scan(dd, ub).y;
    auto ym = sequential_scan(dd, mix).y;
    for (int i = 0; i < 32; ++i) CHECK(std::fabs(ym[i] - (a * ya[i] + b * yb[i])) < 1e-10);
  }
}

TEST_CASE("scan triple agreement: sequential, kernel conv, parallel (200 cases)") {
  Rng rng(23);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = 1 + rng.uniform_u64(8);
    const std::size_t L = 4 + rng.uniform_u64(trial % 10 == 0 ? 1021 : 125);
    auto d = random_diag(rng, h);
    auto u = rvec(L, rng);
    auto y_seq = sequential_scan(d, u).y;
    auto y_conv = conv_apply(ssm_kernel(d, static_cast<std::int64_t>(L)), u);
    auto y_par = parallel_scan(d, u);
    for (std::size_t i = 0; i < L; ++i) {
      CHECK(std::fabs(y_seq[i] - y_conv[i]) < 1e-10);
      CHECK(std::fabs(y_seq[i] - y_par[i]) < 1e-10);
    }
  }
}

TEST_CASE("parallel scan: monoid identity and associativity of combine") {
  Rng rng(29);
  for (int t = 0; t < 1000; ++t) {
    std::pair<cplx, cplx> e{cplx(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                            cplx(rng.uniform(-1, 1), rng.uniform(-1, 1))};
    auto l = scan_combine({1.0, 0.0}, e);
    auto r = scan_combine(e, {1.0, 0.0});
    CHECK(std::abs(l.first - e.first) == 0.0);
    CHECK(std::abs(l.second - e.second) == 0.0);
    CHECK(std::abs(r.first - e.first) < 1e-15);
    CHECK(std::abs(r.second - e.second) < 1e-15);

    std::pair<cplx, cplx> e2{cplx(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                             cplx(rng.uniform(-1, 1), rng.uniform(-1, 1))};
    std::pair<cplx, cplx> e3{cplx(rng.uniform(-1, 1), rng.uniform(-1, 1)),
                             cplx(rng.uniform(-1, 1), rng.uniform(-1, 1))};
    auto left = scan_combine(scan_combine(e, e2), e3);
    auto right = scan_combine(e, scan_combine(e2, e3));
    CHECK(std::abs(left.first - right.first) < 1e-12);
    CHECK(std::abs(left.second - right.second) < 1e-12);
  }
}

TEST_CASE("parallel scan: L=1024 h=16 vs sequential < 1e-10; dense input rejected") {
  Rng rng(37);
  auto d = random_diag(rng, 16);
  auto u = rvec(1024, rng);
  auto y_seq = sequential_scan(d, u).y;
  auto y_par = parallel_scan(d, u);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i)
    max_diff = std::max(max_diff, std::fabs(y_seq[i] - y_par[i]));
  CHECK(max_diff < 1e-10);

  DiscretizedSSM dense;
  dense.tag = ParamTag::dense;
  dense.Abar = la::Mat::identity(2);
  CHECK_THROWS_AS((void)parallel_scan(dense, u), std::invalid_argument);
}

TEST_CASE("stability: |abar| <= 1 - 1e-6 keeps scan output bounded") {
  Rng rng(41);
  for (int t = 0; t < 30; ++t) {
    auto d = random_diag(rng, 4, 1.0 - 1e-6);
    const std::size_t L = 256;
    auto u = rvec(L, rng, -1.0, 1.0);
    double max_u = 0.0;
    for (double v : u) max_u = std::max(max_u, std::fabs(v));
    // bound: sum_s |c_s b_s| * sum_j |a|^j * max|u|
    double bound = 0.0;
    for (std::size_t s = 0; s < d.abar.size(); ++s) {
      const double mag = std::abs(d.abar[s]);
      bound += std::abs(d.cbar[s] * d.bbar[s]) / (1.0 - mag);
    }
    bound *= max_u;
    for (double v : sequential_scan(d, u).y) CHECK(std::fabs(v) <= bound + 1e-9);
  }
}

TEST_CASE("bilinear order 2 against held-input matrix-exponential oracle") {
  // Continuous system driven by sample-and-hold input; the exact solution per
  // interval is the matrix-exponential (ZOH) propagation, which bilinear
  // approximates with global O(dt^2) error.
  Rng rng(43);
  SSMParams p;
  p.tag = ParamTag::dense;
  p.A = la::Mat(3, 3);
  for (auto& v : p.A.a) v = rng.uniform(-1.0, 1.0);
  for (std::size_t i = 0; i < 3; ++i) p.A(i, i) -= 2.0;
  p.B = la::Mat(3, 1);
  p.B(0, 0) = 1.0; p.B(1, 0) = 0.3; p.B(2, 0) = -0.7;
  p.C = la::Mat(1, 3);
  p.C(0, 0) = 0.5; p.C(0, 1) = -1.0; p.C(0, 2) = 0.25;

  const double T = 4.0;
  std::vector<double> dts, errs;
  for (int lvl = 0; lvl < 4; ++lvl) {
    const std::size_t L = 64u << lvl;
    const double dt = T / static_cast<double>(L);
    p.dt = dt;
    std::vector<double> u(L);
    for (std::size_t k = 0; k < L; ++k) {
      const double t = dt * static_cast<double>(k);
      u[k] = std::sin(2.0 * t) + 0.5 * std::cos(5.0 * t);
    }
    auto exact = sequential_scan(zoh_discretize(p), u).y;
    auto approx = sequential_scan(bilinear_discretize(p), u).y;
    double err = 0.0;
    for (std::size_t k = 0; k < L; ++k) err = std::max(err, std::fabs(exact[k] - approx[k]));
    dts.push_back(std::log(dt));
    errs.push_back(std::log(err));
  }
  // least-squares slope
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < dts.size(); ++i) { mx += dts[i]; my += errs[i]; }
  mx /= dts.size(); my /= errs.size();
  double num = 0, den = 0;
  for (std::size_t i = 0; i < dts.size(); ++i) {
    num += (dts[i] - mx) * (errs[i] - my);
    den += (dts[i] - mx) * (dts[i] - mx);
  }
  const double slope = num / den;
  CHECK(slope == doctest::Approx(2.0).epsilon(0.15));

  // zoh and bilinear converge to each other (hence to the same continuous
  // limit) as dt -> 0: error at the finest level is far below the coarsest.
  CHECK(std::exp(errs.back()) < 0.02 * std::exp(errs.front()));
}

TEST_CASE("stepwise scan equals H-form lag kernel and reduces to fixed scan") {
  Rng rng(47);
  const std::size_t L = 24, h = 3;
  StepwiseSSM sw;
  sw.abar.assign(L, std::vector<double>(h));
  sw.bbar.assign(L, std::vector<double>(h));
  sw.cbar.assign(L, std::vector<double>(h));
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t s = 0; s < h; ++s) {
      sw.abar[k][s] = rng.uniform(0.1, 0.95);
      sw.bbar[k][s] = rng.uniform(-1.0, 1.0);
      sw.cbar[k][s] = rng.uniform(-1.0, 1.0);
    }
  auto u = rvec(L, rng);
  auto r = sequential_scan(sw, u);
  auto g = stepwise_lag_kernel(sw);
  auto y2 = conv_apply(g, u);
  for (std::size_t i = 0; i < L; ++i) CHECK(r.y[i] == doctest::Approx(y2[i]));

  // constant parameter sequence == fixed-parameter recurrence
  StepwiseSSM cst;
  cst.abar.assign(L, sw.abar[0]);
  cst.bbar.assign(L, sw.bbar[0]);
  cst.cbar.assign(L, sw.cbar[0]);
  DiscretizedSSM fixed;
  fixed.tag = ParamTag::diagonal;
  for (std::size_t s = 0; s < h; ++s) {
    fixed.abar.emplace_back(sw.abar[0][s], 0.0);
    fixed.bbar.emplace_back(sw.bbar[0][s], 0.0);
    fixed.cbar.emplace_back(sw.cbar[0][s], 0.0);
  }
  auto y_fix = sequential_scan(fixed, u).y;
  auto y_sw = sequential_scan(cst, u).y;
  for (std::size_t i = 0; i < L; ++i) CHECK(std::fabs(y_fix[i] - y_sw[i]) < 1e-10);
}

TEST_CASE("ema: full damping is memoryless; SSM-form equivalence; steady state") {
  const std::size_t d = 2, h = 3, L = 16;
  EMAParams p;
  p.alpha = la::Mat(d, h, 1.0);
  p.delta = la::Mat(d, h, 1.0);
  p.beta = la::Mat(d, h);
  p.eta = la::Mat(d, h);
  Rng rng(53);
  for (auto& v : p.beta.a) v = rng.uniform(-1.0, 1.0);
  for (auto& v : p.eta.a) v = rng.uniform(-1.0, 1.0);
  auto u = rvec(L * d, rng);
  auto y = ema_scan(p, u, L);
  for (std::size_t k = 0; k < L; ++k)
    for (std::size_t c = 0; c < d; ++c) {
      double expect = 0.0;
      for (std::size_t s = 0; s < h; ++s) expect += p.eta(c, s) * p.beta(c, s) * u[k * d + c];
      CHECK(y[k * d + c] == doctest::Approx(expect).epsilon(1e-12));
    }

  // general parameters: equivalence with the SISO SSM form, per channel
  EMAParams q = p;
  for (auto& v : q.alpha.a) v = rng.uniform(0.05, 1.0);
  for (auto& v : q.delta.a) v = rng.uniform(0.05, 1.0);
  auto yq = ema_scan(q, u, L);
  for (std::size_t c = 0; c < d; ++c) {
    std::vector<double> uc(L);
    for (std::size_t k = 0; k < L; ++k) uc[k] = u[k * d + c];
    auto yc = sequential_scan(ema_to_ssm(q, c), uc).y;
    for (std::size_t k = 0; k < L; ++k) CHECK(std::fabs(yc[k] - yq[k * d + c]) < 1e-12);
  }

  // constant input converges to eta^T((alpha.beta c)/(alpha.delta))
  const double cval = 0.8;
  std::vector<double> uconst(4096 * d, cval);
  auto ys = ema_scan(q, uconst, 4096);
  for (std::size_t c = 0; c < d; ++c) {
    double target = 0.0;
    for (std::size_t s = 0; s < h; ++s)
      target += q.eta(c, s) * (q.alpha(c, s) * q.beta(c, s) * cval) / (q.alpha(c, s) * q.delta(c, s));
    CHECK(ys[(4096 - 1) * d + c] == doctest::Approx(target).epsilon(1e-6));
  }
}

TEST_CASE("conditioning report: dt=1 vs dt=1e-12 on A=-I") {
  la::Mat a = la::scale(la::Mat::identity(3), -1.0);
  auto r1 = conditioning_report(1.0, a);
  CHECK(r1.kappa == doctest::Approx(1.0));
  CHECK(!r1.flagged);
  CHECK(r1.min_abs_eig == doctest::Approx(1.0));

  auto r2 = conditioning_report(1e-12, a);
  CHECK(r2.kappa == doctest::Approx(1.0));
  CHECK(r2.min_abs_eig == doctest::Approx(1e-12).epsilon(1e-3));
  CHECK(r2.flagged);  // inverse magnitude 1e12 exceeds the 1e8 threshold
  // ||Bbar|| stays finite (limit dt*B) even though the inverse blows up
  CHECK(r2.bbar_norm < 1e-9);
  CHECK(std::isfinite(r2.bbar_norm));

  la::Mat sing(2, 2);
  sing(0, 0) = 1.0;
  auto r3 = conditioning_report(1.0, sing);
  CHECK(std::isinf(r3.kappa));
  CHECK(r3.flagged);
}

TEST_CASE("params dump/load round trip") {
  SSMParams p;
  p.tag = ParamTag::diagonal;
  p.dt = 0.125;
  p.lambda = {cplx(-0.5, 1.25), cplx(-1.5, -2.0)};
  p.b = {cplx(1.0, 0.0), cplx(0.25, -0.5)};
  p.c = {cplx(0.5, 0.5), cplx(-1.0, 0.0)};
  auto text = dump_params(p);
  auto q = load_params(text);
  CHECK(q.tag == ParamTag::diagonal);
  CHECK(q.dt == p.dt);
  for (int i = 0; i < 2; ++i) {
    CHECK(q.lambda[i] == p.lambda[i]);
    CHECK(q.b[i] == p.b[i]);
    CHECK(q.c[i] == p.c[i]);
  }

  SSMParams pd;
  pd.tag = ParamTag::dense;
  pd.dt = 2.0;
  pd.A = la::Mat(2, 2);
  pd.A(0, 0) = -1.0; pd.A(0, 1) = 0.5; pd.A(1, 0) = 0.0; pd.A(1, 1) = -2.0;
  pd.B = la::Mat(2, 1, 1.0);
  pd.C = la::Mat(1, 2, 0.5);
  auto qd = load_params(dump_params(pd));
  CHECK(qd.A.a == pd.A.a);
  CHECK(qd.B.a == pd.B.a);
  CHECK(qd.C.a == pd.C.a);
}

// --- differentiable layer ops ------------------------------------------------

TEST_CASE("causal_conv_fixed matches numeric conv and passes gradcheck") {
  Rng rng(61);
  const std::int64_t B = 2, L = 9, C = 3;
  Tensor u = rparam({B, L, C}, rng);
  Tensor k = rparam({L, C}, rng);
  Tensor y = causal_conv_fixed(u, k);
  for (std::int64_t c = 0; c < C; ++c) {
    std::vector<double> kc(L), uc(L);
    for (std::int64_t m = 0; m < L; ++m) kc[m] = k.at({m, c});
    for (std::int64_t j = 0; j < L; ++j) uc[j] = u.at({1, j, c});
    auto yc = conv_apply(kc, uc);
    for (std::int64_t t = 0; t < L; ++t) CHECK(y.at({1, t, c}) == doctest::Approx(yc[t]));
  }
  auto res = ad::gradcheck([&] { return ad::mean_all(ad::tanh_act(causal_conv_fixed(u, k))); },
                           {u, k});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("causal_conv_var gradcheck") {
  Rng rng(67);
  Tensor u = rparam({2, 7, 3}, rng);
  Tensor g = rparam({2, 7}, rng);
  auto res = ad::gradcheck([&] { return ad::mean_all(ad::silu(causal_conv_var(u, g))); }, {u, g});
  CHECK(res.max_rel_error < 1e-4);
}

TEST_CASE("diag_recurrence: sequential == parallel, gradcheck") {
  Rng rng(71);
  Tensor a = Tensor::param({4}, {0.9, -0.5, 0.3, 0.99});
  Tensor u = rparam({2, 33, 4}, rng);
  Tensor xs = diag_recurrence(a, u, false);
  Tensor xp = diag_recurrence(a, u, true);
  for (std::int64_t i = 0; i < xs.numel(); ++i)
    CHECK(std::fabs(xs.data()[i] - xp.data()[i]) < 1e-10);

  Tensor u2 = rparam({2, 6, 4}, rng);
  auto res = ad::gradcheck([&] { return ad::mean_all(ad::mul(diag_recurrence(a, u2), u2)); },
                           {a, u2});
  CHECK(res.max_rel_error < 1e-4);
  auto resp = ad::gradcheck(
      [&] { return ad::mean_all(ad::mul(diag_recurrence(a, u2, true), u2)); }, {a, u2});
  CHECK(resp.max_rel_error < 1e-4);
}

TEST_CASE("cdiag_recurrence: matches numeric complex scan, gradcheck") {
  Rng rng(73);
  const std::int64_t B = 1, L = 12, C = 2;
  Tensor ar = Tensor::param({C}, {0.6, -0.2});
  Tensor ai = Tensor::param({C}, {0.5, 0.7});
  Tensor ur = rparam({B, L, C}, rng);
  Tensor ui = rparam({B, L, C}, rng);
  auto [xr, xi] = cdiag_recurrence(ar, ai, ur, ui);
  for (std::int64_t c = 0; c < C; ++c) {
    cplx a(ar.data()[c], ai.data()[c]);
    cplx x = 0.0;
    for (std::int64_t l = 0; l < L; ++l) {
      x = a * x + cplx(ur.at({0, l, c}), ui.at({0, l, c}));
      CHECK(std::fabs(xr.at({0, l, c}) - x.real()) < 1e-12);
      CHECK(std::fabs(xi.at({0, l, c}) - x.imag()) < 1e-12);
    }
  }
  auto loss = [&] {
    auto [r, i] = cdiag_recurrence(ar, ai, ur, ui);
    return ad::mean_all(ad::add(ad::mul(r, r), ad::mul(i, ad::mul_scalar(i, 0.7))));
  };
  CHECK(ad::gradcheck(loss, {ar, ai, ur, ui}).max_rel_error < 1e-4);
  auto lossp = [&] {
    auto [r, i] = cdiag_recurrence(ar, ai, ur, ui, true);
    return ad::mean_all(ad::add(ad::mul(r, r), ad::mul(i, i)));
  };
  CHECK(ad::gradcheck(lossp, {ar, ai, ur, ui}).max_rel_error < 1e-4);
}

TEST_CASE("dense_power_kernel matches ssm_kernel, gradcheck") {
  Rng rng(79);
  const std::int64_t h = 3, d = 2, L = 8;
  Tensor A = rparam({h, h}, rng, 0.4);
  Tensor Bv = rparam({h}, rng);
  Tensor Cm = rparam({d, h}, rng);
  Tensor K = dense_power_kernel(A, Bv, Cm, L);
  DiscretizedSSM ds;
  ds.tag = ParamTag::dense;
  ds.Abar = la::Mat(h, h);
  std::copy(A.data().begin(), A.data().end(), ds.Abar.a.begin());
  ds.Bbar = la::Mat(h, 1);
  for (std::int64_t i = 0; i < h; ++i) ds.Bbar(i, 0) = Bv.data()[i];
  ds.Cbar = la::Mat(1, h);
  for (std::int64_t i = 0; i < h; ++i) ds.Cbar(0, i) = Cm.at({0, i});
  auto k0 = ssm_kernel(ds, L);
  for (std::int64_t m = 0; m < L; ++m) CHECK(K.at({m, 0}) == doctest::Approx(k0[m]));

  auto loss = [&] { return ad::mean_all(ad::mul(dense_power_kernel(A, Bv, Cm, L),
                                                dense_power_kernel(A, Bv, Cm, L))); };
  CHECK(ad::gradcheck(loss, {A, Bv, Cm}).max_rel_error < 1e-4);
}

TEST_CASE("bilinear_disc_dense matches numeric discretization, gradcheck") {
  Rng rng(83);
  const std::int64_t h = 3;
  Tensor A = rparam({h, h}, rng, 0.5);
  Tensor b = rparam({h}, rng);
  const double dt = 0.3;
  auto [Abar, Bbar] = bilinear_disc_dense(A, b, dt);
  SSMParams p;
  p.tag = ParamTag::dense;
  p.dt = dt;
  p.A = la::Mat(h, h);
  std::copy(A.data().begin(), A.data().end(), p.A.a.begin());
  p.B = la::Mat(h, 1);
  for (std::int64_t i = 0; i < h; ++i) p.B(i, 0) = b.data()[i];
  p.C = la::Mat(1, h, 1.0);
  auto d = bilinear_discretize(p);
  for (std::int64_t i = 0; i < h * h; ++i) CHECK(Abar.data()[i] == doctest::Approx(d.Abar.a[i]));
  for (std::int64_t i = 0; i < h; ++i) CHECK(Bbar.data()[i] == doctest::Approx(d.Bbar(i, 0)));

  auto loss = [&] {
    auto [Ab, Bb] = bilinear_disc_dense(A, b, dt);
    return ad::add(ad::mean_all(ad::mul(Ab, Ab)), ad::mean_all(ad::tanh_act(Bb)));
  };
  CHECK(ad::gradcheck(loss, {A, b}).max_rel_error < 1e-4);
}

TEST_CASE("ads layer: sigmoid/relu zero-parameter anchors, gradcheck") {
  Rng rng(89);
  const std::int64_t B = 1, L = 3, d = 2;
  Tensor y = rparam({B, L, d}, rng);

  AdsLayer sig{Tensor::zeros({d, d}), Tensor::zeros({d}), Tensor::zeros({d, d}),
               Tensor::zeros({d}), Activation::sigmoid};
  Tensor out = sig.forward(y);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    CHECK(out.data()[i] == doctest::Approx(0.5 * y.data()[i] + 0.5).epsilon(1e-12));

  AdsLayer rel{Tensor::zeros({d, d}), Tensor::zeros({d}), Tensor::zeros({d, d}),
               Tensor::zeros({d}), Activation::relu};
  Tensor outr = rel.forward(y);
  for (std::int64_t i = 0; i < outr.numel(); ++i) CHECK(outr.data()[i] == 0.0);

  AdsLayer t{rparam({d, d}, rng), rparam({d}, rng), rparam({d, d}, rng), rparam({d}, rng),
             Activation::tanh};
  auto loss = [&] { return ad::mean_all(ad::mul(t.forward(y), t.forward(y))); };
  CHECK(ad::gradcheck(loss, {t.w1, t.b1, t.w2, t.b2, y}).max_rel_error < 1e-4);
}

TEST_CASE("ema layer matches numeric oracle, gradcheck") {
  Rng rng(97);
  const std::int64_t B = 2, L = 10, d = 2, h = 3;
  EmaLayer ema{rparam({d * h}, rng), rparam({d * h}, rng), rparam({d * h}, rng),
               rparam({d * h}, rng), d, h};
  Tensor u = rparam({B, L, d}, rng);
  Tensor y = ema.forward(u);
  auto p = ema.freeze();
  std::vector<double> u0(static_cast<std::size_t>(L * d));
  for (std::int64_t i = 0; i < L * d; ++i) u0[i] = u.data()[i];
  auto y0 = ema_scan(p, u0, static_cast<std::size_t>(L));
  for (std::int64_t i = 0; i < L * d; ++i)
    CHECK(y.data()[i] == doctest::Approx(y0[i]).epsilon(1e-10));

  auto loss = [&] { return ad::mean_all(ad::mul(ema.forward(u), ema.forward(u))); };
  CHECK(ad::gradcheck(loss, {ema.alpha_raw, ema.delta_raw, ema.beta, ema.eta, u}).max_rel_error <
        1e-4);
}

TEST_CASE("attention: L=1 identity-plus-value, uniform rows, row-stochastic") {
  Rng rng(101);
  const std::int64_t d = 3;
  AttentionLayer at{rparam({d, d}, rng), rparam({d, d}, rng), rparam({d, d}, rng)};

  Tensor y1 = rparam({1, 1, d}, rng);
  Tensor u1 = rparam({1, 1, d}, rng);
  Tensor o1 = at.forward(y1, u1);
  for (std::int64_t c = 0; c < d; ++c) {
    double v = 0.0;
    for (std::int64_t j = 0; j < d; ++j) v += u1.at({0, 0, j}) * at.wv.at({j, c});
    CHECK(o1.at({0, 0, c}) == doctest::Approx(v + y1.at({0, 0, c})).epsilon(1e-12));
  }

  // identical rows in y -> uniform attention; check via uniform mix of values
  const std::int64_t L = 4;
  std::vector<double> rowvals{0.3, -0.8, 1.2};
  std::vector<double> ydata;
  for (std::int64_t l = 0; l < L; ++l)
    ydata.insert(ydata.end(), rowvals.begin(), rowvals.end());
  Tensor yu = Tensor::from({1, L, d}, ydata);
  Tensor uu = rparam({1, L, d}, rng);
  Tensor ou = at.forward(yu, uu);
  for (std::int64_t c = 0; c < d; ++c) {
    double vbar = 0.0;
    for (std::int64_t l = 0; l < L; ++l)
      for (std::int64_t j = 0; j < d; ++j) vbar += uu.at({0, l, j}) * at.wv.at({j, c}) / L;
    for (std::int64_t l = 0; l < L; ++l)
      CHECK(ou.at({0, l, c}) == doctest::Approx(vbar + rowvals[c]).epsilon(1e-10));
  }

  // row-stochasticity: softmax rows sum to 1 within 1e-12 (checked via the
  // softmax op directly on random scores)
  Tensor sc = rparam({2, 5, 5}, rng, 3.0);
  Tensor sm = ad::softmax(sc, 2);
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 5; ++i) {
      double s = 0.0;
      for (std::int64_t j = 0; j < 5; ++j) s += sm.at({b, i, j});
      CHECK(std::fabs(s - 1.0) < 1e-12);
    }

  Tensor yg = rparam({2, 3, d}, rng);
  Tensor ug = rparam({2, 3, d}, rng);
  auto loss = [&] { return ad::mean_all(ad::mul(at.forward(yg, ug), at.forward(yg, ug))); };
  CHECK(ad::gradcheck(loss, {at.wq, at.wk, at.wv, yg, ug}).max_rel_error < 1e-4);
}

TEST_CASE("s6: zero generator weights reduce to fixed-parameter scan; gradcheck") {
  Rng rng(103);
  const std::int64_t B = 1, L = 10, C = 2, h = 3;
  S6Layer s6{Tensor::zeros({C, 1}), Tensor::from({1}, {0.4}), rparam({C, h}, rng),
             rparam({C, h}, rng), rparam({h}, rng, 0.5)};
  // zero dt/B/C weights except bias: dt_k constant = softplus(0.4); B_k, C_k
  // constant only if w_B, w_C produce constants -- use constant input instead.
  Tensor xc = Tensor::full({B, L, C}, 0.7);
  Tensor y = s6.forward(xc);
  auto sw = s6.freeze(xc, 0);
  // all steps share identical parameters -> equals fixed-parameter scan
  DiscretizedSSM fixed;
  fixed.tag = ParamTag::diagonal;
  for (std::int64_t s = 0; s < h; ++s) {
    fixed.abar.emplace_back(sw.abar[0][static_cast<std::size_t>(s)], 0.0);
    fixed.bbar.emplace_back(sw.bbar[0][static_cast<std::size_t>(s)], 0.0);
    fixed.cbar.emplace_back(sw.cbar[0][static_cast<std::size_t>(s)], 0.0);
  }
  std::vector<double> uc(L, 0.7);
  auto yfix = sequential_scan(fixed, uc).y;
  for (std::int64_t l = 0; l < L; ++l)
    CHECK(y.at({0, l, 0}) == doctest::Approx(yfix[static_cast<std::size_t>(l)]).epsilon(1e-10));

  // frozen stepwise of a varying input reproduces the layer output channelwise
  Tensor xv = rparam({B, L, C}, rng);
  Tensor yv = s6.forward(xv);
  auto swv = s6.freeze(xv, 0);
  for (std::int64_t c = 0; c < C; ++c) {
    std::vector<double> ucv(L);
    for (std::int64_t l = 0; l < L; ++l) ucv[l] = xv.at({0, l, c});
    auto ych = sequential_scan(swv, ucv).y;
    for (std::int64_t l = 0; l < L; ++l)
      CHECK(yv.at({0, l, c}) == doctest::Approx(ych[static_cast<std::size_t>(l)]).epsilon(1e-9));
  }

  S6Layer g{rparam({C, 1}, rng, 0.3), rparam({1}, rng), rparam({C, h}, rng), rparam({C, h}, rng),
            rparam({h}, rng, 0.5)};
  Tensor xg = rparam({2, 6, C}, rng);
  auto loss = [&] { return ad::mean_all(ad::mul(g.forward(xg), g.forward(xg))); };
  CHECK(ad::gradcheck(loss, {g.w_dt, g.b_dt, g.w_B, g.w_C, g.lambda_log, xg}).max_rel_error < 1e-4);
}

TEST_CASE("conditioning flag trips for data-dependent steps with tiny softplus bias") {
  // dt_k = softplus(bias) with bias << 0 makes min |eig(dt A)| collapse even
  // though cond(dt A) stays at cond(A)
  const double bias = -25.0;
  const double dtk = std::log1p(std::exp(bias));  // ~1.4e-11
  la::Mat a = la::scale(la::Mat::identity(3), -1.0);
  auto rep = conditioning_report(dtk, a);
  CHECK(rep.kappa == doctest::Approx(1.0));
  CHECK(rep.flagged);
  CHECK(rep.inv_scale > 1e8);
}

TEST_CASE("ssm_kernel and scans reject non-SISO dense shapes; dss needs L >= 1") {
  DiscretizedSSM d;
  d.tag = ParamTag::dense;
  d.Abar = la::Mat::identity(2);
  d.Bbar = la::Mat(2, 3, 1.0);  // MIMO input map
  d.Cbar = la::Mat(1, 2, 1.0);
  CHECK_THROWS_AS((void)ssm_kernel(d, 4), std::invalid_argument);
  CHECK_THROWS_AS((void)dss_instantiate({cplx(-1.0, 0.0)}, 0.1, 0), std::invalid_argument);
}

TEST_CASE("real-only diagonal mode keeps imaginary parts at zero") {
  model::ModelSpec s;
  s.variant = model::Variant::dss;
  s.input_dim = 1;
  s.model_dim = 8;
  s.state_dim = 4;
  s.n_layers = 1;
  s.n_classes = 3;
  s.dt = 0.05;
  s.complex_modes = false;
  auto m = model::build_model(s, 2);
  for (const auto& [name, t] : m.parameters())
    if (name.find("lam_im") != std::string::npos) {
      for (auto v : t.data()) CHECK(v == 0.0);
      CHECK(!t.requires_grad());
    }
  Rng rng(3);
  std::vector<double> xv(2 * 10);
  for (auto& v : xv) v = rng.uniform(0.0, 1.0);
  CHECK(m.forward(Tensor::from({2, 10, 1}, xv)).shape() == ad::Shape{2, 3});
}
