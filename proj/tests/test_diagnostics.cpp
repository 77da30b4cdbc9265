#include <doctest.h>

#include <cmath>

#include "ssmlab/diag/divergence.hpp"
#include "ssmlab/rng.hpp"

using namespace ssmlab;
using namespace ssmlab::diag;
using ad::Tensor;

namespace {

std::vector<double> rvec(std::size_t n, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("seq_softmax: constant column is uniform; columns sum to 1; closed form") {
  const std::size_t L = 5, d = 3;
  std::vector<double> f(L * d, 0.7);
  auto s = seq_softmax(f.data(), L, d);
  for (double v : s) CHECK(v == doctest::Approx(1.0 / L).epsilon(1e-12));

  Rng rng(1);
  auto g = rvec(L * d, rng, -30.0, 30.0);
  auto sg = seq_softmax(g.data(), L, d);
  for (std::size_t j = 0; j < d; ++j) {
    double sum = 0.0;
    for (std::size_t k = 0; k < L; ++k) sum += sg[k * d + j];
    CHECK(std::fabs(sum - 1.0) < 1e-12);
  }

  // L=2 column [0, ln 3] -> [0.25, 0.75]
  std::vector<double> two{0.0, std::log(3.0)};
  auto st = seq_softmax(two.data(), 2, 1);
  CHECK(st[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(st[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("mse_seq anchors: zero, hand value, homogeneity") {
  Rng rng(2);
  auto f = rvec(12, rng);
  CHECK(mse_seq(f.data(), f.data(), 4, 3) == 0.0);

  std::vector<double> a{0.0, 0.0}, b{1.0, 1.0};
  CHECK(mse_seq(a.data(), b.data(), 2, 1) == doctest::Approx(1.0));

  auto g = rvec(12, rng);
  const double c = 2.5;
  std::vector<double> fc(12), gc(12);
  for (int i = 0; i < 12; ++i) {
    fc[i] = c * f[i];
    gc[i] = c * g[i];
  }
  CHECK(mse_seq(fc.data(), gc.data(), 4, 3) ==
        doctest::Approx(c * c * mse_seq(f.data(), g.data(), 4, 3)).epsilon(1e-12));
}

TEST_CASE("kl_seq: zero on equal, nonnegative, shift invariant per column") {
  Rng rng(3);
  auto f = rvec(20, rng);
  CHECK(kl_seq(f.data(), f.data(), 5, 4) == 0.0);

  for (int t = 0; t < 200; ++t) {
    auto a = rvec(20, rng);
    auto b = rvec(20, rng);
    CHECK(kl_seq(a.data(), b.data(), 5, 4) >= -1e-12);
  }

  // adding a constant uniformly over positions of f' leaves kl unchanged
  auto fp = rvec(20, rng);
  auto fps = fp;
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j < 4; ++j) fps[k * 4 + j] += 3.7;
  CHECK(kl_seq(f.data(), fp.data(), 5, 4) ==
        doctest::Approx(kl_seq(f.data(), fps.data(), 5, 4)).epsilon(1e-10));
}

TEST_CASE("identity component has exactly zero change") {
  // before metrics on (f_in, f'_in); an identity component passes both
  // through unchanged, so after == before exactly.
  Rng rng(4);
  auto fi = rvec(24, rng);
  auto fa = rvec(24, rng);
  const double mb = mse_seq(fi.data(), fa.data(), 6, 4);
  const double ma = mse_seq(fi.data(), fa.data(), 6, 4);
  CHECK(ma - mb == 0.0);
}

TEST_CASE("measure_components: zero-budget attack gives all-zero divergences, null rates") {
  model::ModelSpec spec;
  spec.variant = model::Variant::dss;
  spec.input_dim = 1;
  spec.model_dim = 8;
  spec.state_dim = 4;
  spec.n_layers = 2;
  spec.n_classes = 3;
  spec.dt = 0.05;
  spec.ads = ssm::Activation::relu;
  auto m = model::build_model(spec, 5);

  Rng rng(6);
  adv::Dataset data;
  data.inputs = Tensor::from({6, 10, 1}, rvec(60, rng, 0.0, 1.0));
  data.labels = {0, 1, 2, 0, 1, 2};

  adv::AttackConfig zero;
  zero.epsilon = 0.0;
  zero.alpha = 0.0;
  auto rep = measure_components(m, data, zero, "test", 7);
  REQUIRE(!rep.rows.empty());
  for (const auto& row : rep.rows) {
    CHECK(row.before == 0.0);
    CHECK(row.after == 0.0);
    CHECK(row.change == 0.0);
    CHECK(!row.change_rate.has_value());  // 0/0 reported as null
    CHECK(row.layers_averaged == 2);
  }
}

TEST_CASE("measure_components: reproducible bit-identically, nonzero under attack") {
  model::ModelSpec spec;
  spec.variant = model::Variant::dss;
  spec.input_dim = 1;
  spec.model_dim = 8;
  spec.state_dim = 4;
  spec.n_layers = 1;
  spec.n_classes = 3;
  spec.dt = 0.05;
  auto m = model::build_model(spec, 9);

  Rng rng(8);
  adv::Dataset data;
  data.inputs = Tensor::from({5, 8, 1}, rvec(40, rng, 0.0, 1.0));
  data.labels = {0, 1, 2, 1, 0};

  adv::AttackConfig atk;
  atk.epsilon = 0.2;
  atk.alpha = 0.05;
  atk.steps = 5;
  auto r1 = measure_components(m, data, atk, "train", 3);
  auto r2 = measure_components(m, data, atk, "train", 3);
  REQUIRE(r1.rows.size() == r2.rows.size());
  bool any_positive = false;
  for (std::size_t i = 0; i < r1.rows.size(); ++i) {
    CHECK(r1.rows[i].before == r2.rows[i].before);  // bit-identical
    CHECK(r1.rows[i].after == r2.rows[i].after);
    any_positive = any_positive || r1.rows[i].before > 0.0;
  }
  CHECK(any_positive);
  CHECK(format_report(r1) == format_report(r2));

  // split fields kept separate: no mixing
  auto rt = measure_components(m, data, atk, "test", 3);
  for (const auto& row : rt.rows) CHECK(row.split == "test");

  auto plot = format_plot_data(r1);
  CHECK(plot.find("component metric split change_rate") == 0);
  CHECK(plot.find("ssm mse train") != std::string::npos);
}
