#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>

#include "ssmlab/linalg.hpp"
#include "ssmlab/rng.hpp"

using namespace ssmlab;
using la::Mat;

namespace {

Mat random_mat(std::size_t n, Rng& rng, double scale = 1.0) {
  Mat m(n, n);
  for (auto& v : m.a) v = rng.uniform(-scale, scale);
  return m;
}

}  // namespace

TEST_CASE("lu solve reproduces known solution") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.uniform_u64(12);
    Mat m = random_mat(n, rng);
    for (std::size_t i = 0; i < n; ++i) m(i, i) += 4.0;  // well conditioned
    std::vector<double> x_true(n);
    for (auto& v : x_true) v = rng.uniform(-2.0, 2.0);
    auto b = la::matvec(m, x_true);
    auto x = la::solve(m, b);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::fabs(x[i] - x_true[i]) < 1e-10);
  }
}

TEST_CASE("lu reports singularity") {
  Mat m(2, 2);
  m(0, 0) = 1.0; m(0, 1) = 2.0;
  m(1, 0) = 2.0; m(1, 1) = 4.0;
  CHECK_THROWS_AS((void)la::lu_factor(m), std::runtime_error);
  CHECK(la::det(m) == 0.0);
}

TEST_CASE("expm matches diagonal and rotation closed forms") {
  Mat d(2, 2);
  d(0, 0) = -1.0;
  d(1, 1) = 0.5;
  Mat e = la::expm(d);
  CHECK(std::fabs(e(0, 0) - std::exp(-1.0)) < 1e-14);
  CHECK(std::fabs(e(1, 1) - std::exp(0.5)) < 1e-14);
  CHECK(std::fabs(e(0, 1)) < 1e-15);

  // exp([[0,-t],[t,0]]) = rotation by t
  const double t = 1.234;
  Mat r(2, 2);
  r(0, 1) = -t;
  r(1, 0) = t;
  Mat er = la::expm(r);
  CHECK(std::fabs(er(0, 0) - std::cos(t)) < 1e-13);
  CHECK(std::fabs(er(1, 0) - std::sin(t)) < 1e-13);
}

TEST_CASE("expm handles large norm via scaling") {
  Rng rng(5);
  Mat a = random_mat(6, rng, 3.0);
  Mat e1 = la::expm(a);
  // exp(A) = exp(A/2)^2
  Mat h = la::scale(a, 0.5);
  Mat e2 = la::matmul(la::expm(h), la::expm(h));
  for (std::size_t i = 0; i < e1.a.size(); ++i)
    CHECK(std::fabs(e1.a[i] - e2.a[i]) < 1e-9 * std::max(1.0, std::fabs(e1.a[i])));
}

TEST_CASE("eig_sym matches closed-form 2x2 and is sorted") {
  Mat m(2, 2);
  m(0, 0) = 2.0; m(0, 1) = 1.0;
  m(1, 0) = 1.0; m(1, 1) = 1.0;
  auto ev = la::eig_sym(m);
  CHECK(std::fabs(ev[0] - (3.0 - std::sqrt(5.0)) / 2.0) < 1e-12);
  CHECK(std::fabs(ev[1] - (3.0 + std::sqrt(5.0)) / 2.0) < 1e-12);
}

TEST_CASE("eig finds complex pairs and known spectra") {
  // Rotation-like matrix: eigenvalues cos(t) +- i sin(t).
  const double t = 0.7;
  Mat r(2, 2);
  r(0, 0) = std::cos(t); r(0, 1) = -std::sin(t);
  r(1, 0) = std::sin(t); r(1, 1) = std::cos(t);
  auto ev = la::eig(r);
  REQUIRE(ev.size() == 2);
  std::sort(ev.begin(), ev.end(), [](auto a, auto b) { return a.imag() < b.imag(); });
  CHECK(std::fabs(ev[0].real() - std::cos(t)) < 1e-12);
  CHECK(std::fabs(ev[0].imag() + std::sin(t)) < 1e-12);

  // Companion matrix of (x-1)(x-2)(x-3).
  Mat c(3, 3);
  c(0, 0) = 6.0; c(0, 1) = -11.0; c(0, 2) = 6.0;
  c(1, 0) = 1.0; c(2, 1) = 1.0;
  auto ev3 = la::eig(c);
  std::vector<double> re;
  for (auto z : ev3) {
    CHECK(std::fabs(z.imag()) < 1e-9);
    re.push_back(z.real());
  }
  std::sort(re.begin(), re.end());
  CHECK(std::fabs(re[0] - 1.0) < 1e-9);
  CHECK(std::fabs(re[1] - 2.0) < 1e-9);
  CHECK(std::fabs(re[2] - 3.0) < 1e-9);
}

TEST_CASE("eig agrees with eig_sym on random symmetric matrices") {
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.uniform_u64(10);
    Mat m = random_mat(n, rng);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j) m(j, i) = m(i, j);
    auto sym = la::eig_sym(m);
    auto gen = la::eig(m);
    std::vector<double> re;
    for (auto z : gen) {
      CHECK(std::fabs(z.imag()) < 1e-8);
      re.push_back(z.real());
    }
    std::sort(re.begin(), re.end());
    for (std::size_t i = 0; i < n; ++i) CHECK(std::fabs(re[i] - sym[i]) < 1e-8);
  }
}

TEST_CASE("cond_1 of identity is 1, singular is inf") {
  CHECK(la::cond_1(Mat::identity(4)) == doctest::Approx(1.0));
  Mat s(2, 2);
  s(0, 0) = 1.0; s(0, 1) = 1.0;
  s(1, 0) = 1.0; s(1, 1) = 1.0;
  CHECK(std::isinf(la::cond_1(s)));
}
