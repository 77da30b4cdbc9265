#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "ssmlab/checkpoint.hpp"
#include "ssmlab/gradcheck.hpp"
#include "ssmlab/ops.hpp"
#include "ssmlab/optim.hpp"
#include "ssmlab/rng.hpp"
#include "ssmlab/tensor.hpp"

using namespace ssmlab;
using namespace ssmlab::ad;

namespace {

Tensor random_param(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor::param(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("backward: d(x*x)/dx = 2x") {
  Tensor x = Tensor::param({}, {3.0});
  Graph g;
  Tensor loss = mul(x, x);
  g.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("backward: sum of softmax has zero gradient") {
  Rng rng(1);
  Tensor z = random_param({6}, rng, 4.0);
  Graph g;
  Tensor loss = sum_all(softmax(z, 0));
  g.backward(loss);
  for (auto gv : z.grad()) CHECK(std::fabs(gv) < 1e-12);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor x = Tensor::param({2}, {1.0, 2.0});
  Graph g;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);
}

TEST_CASE("softmax values and row sums") {
  Tensor a = Tensor::from({2}, {0.0, 0.0});
  CHECK(softmax(a, 0).at({0}) == doctest::Approx(0.5));
  Tensor b = Tensor::from({2}, {1000.0, 1000.0});
  auto sb = softmax(b, 0);
  CHECK(sb.at({0}) == doctest::Approx(0.5));  // no overflow
  CHECK(std::isfinite(sb.at({1})));
  Tensor c = Tensor::from({2}, {0.0, std::log(3.0)});
  auto sc = softmax(c, 0);
  CHECK(sc.at({0}) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(sc.at({1}) == doctest::Approx(0.75).epsilon(1e-12));

  Rng rng(2);
  Tensor m = random_param({8, 13}, rng, 30.0);
  auto sm = softmax(m, 1);
  for (int i = 0; i < 8; ++i) {
    double s = 0.0;
    for (int j = 0; j < 13; ++j) s += sm.at({i, j});
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
  // softmax along the other axis normalizes columns
  auto sm0 = softmax(m, 0);
  for (int j = 0; j < 13; ++j) {
    double s = 0.0;
    for (int i = 0; i < 8; ++i) s += sm0.at({i, j});
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("activation anchor values") {
  Tensor x = Tensor::from({4}, {-2.0, 2.0, 0.0, 1.0});
  auto r = relu(x);
  CHECK(r.at({0}) == 0.0);
  CHECK(r.at({1}) == 2.0);
  CHECK(sigmoid(Tensor::from({1}, {0.0})).at({0}) == doctest::Approx(0.5));
  CHECK(tanh_act(Tensor::from({1}, {0.0})).at({0}) == doctest::Approx(0.0));
  CHECK(silu(Tensor::from({1}, {1.0})).at({0}) ==
        doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("layer_norm anchor rows") {
  Tensor gamma = Tensor::from({4}, {1.0, 1.0, 1.0, 1.0});
  Tensor beta = Tensor::from({4}, {0.0, 0.0, 0.0, 0.0});
  Tensor c = Tensor::from({1, 4}, {5.0, 5.0, 5.0, 5.0});
  auto yc = layer_norm(c, gamma, beta);
  for (int j = 0; j < 4; ++j) CHECK(std::fabs(yc.at({0, j})) < 1e-9);

  Tensor pm = Tensor::from({1, 2}, {-1.0, 1.0});
  Tensor g2 = Tensor::from({2}, {1.0, 1.0});
  Tensor b2 = Tensor::from({2}, {0.0, 0.0});
  auto ypm = layer_norm(pm, g2, b2);
  CHECK(ypm.at({0, 0}) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(ypm.at({0, 1}) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("cross_entropy anchor values and errors") {
  // uniform logits, K=10 -> ln 10
  Tensor z = Tensor::zeros({1, 10});
  CHECK(cross_entropy(z, {3}).item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  // dominant logit -> 0
  std::vector<double> big(5, 0.0);
  big[2] = 60.0;
  CHECK(cross_entropy(Tensor::from({1, 5}, big), {2}).item() == doctest::Approx(0.0).epsilon(1e-12));
  // logits [1,0], label 0 -> ln(1+e^-1)
  CHECK(cross_entropy(Tensor::from({1, 2}, {1.0, 0.0}), {0}).item() ==
        doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK_THROWS_AS((void)cross_entropy(Tensor::zeros({1, 4}), {4}), std::invalid_argument);
  CHECK_THROWS_AS((void)cross_entropy(Tensor::zeros({1, 4}), {-1}), std::invalid_argument);
}

TEST_CASE("kl_div_rows anchors, positivity and errors") {
  Tensor p = Tensor::from({1, 2}, {0.3, 0.7});
  CHECK(kl_div_rows(p, p, KlInput::probabilities).at({0}) == doctest::Approx(0.0));

  Tensor onehot = Tensor::from({1, 2}, {1.0, 0.0});
  Tensor unif = Tensor::from({1, 2}, {0.5, 0.5});
  CHECK(kl_div_rows(onehot, unif, KlInput::probabilities).at({0}) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-9));

  CHECK_THROWS_AS(
      (void)kl_div_rows(Tensor::from({1, 2}, {-0.1, 1.1}), unif, KlInput::probabilities),
      std::invalid_argument);

  Rng rng(5);
  for (int t = 0; t < 1000; ++t) {
    Tensor a = Tensor::from({1, 6}, [&] {
      std::vector<double> v(6);
      for (auto& x : v) x = rng.uniform(-5.0, 5.0);
      return v;
    }());
    Tensor b = Tensor::from({1, 6}, [&] {
      std::vector<double> v(6);
      for (auto& x : v) x = rng.uniform(-5.0, 5.0);
      return v;
    }());
    CHECK(kl_div_rows(a, b, KlInput::logits).at({0}) >= -1e-12);
  }
}

TEST_CASE("finite differences: elementwise, matmul, losses, norm") {
  Rng rng(11);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng r = Rng::derive(123, seed);
    Tensor x = random_param({3, 4}, r);
    Tensor w = random_param({4, 5}, r);
    Tensor gamma = random_param({5}, r);
    Tensor beta = random_param({5}, r);
    auto forward = [&] {
      Tensor h = matmul(x, w);
      h = layer_norm(h, gamma, beta);
      h = gelu(h);
      Tensor s = softmax(h, 1);
      Tensor w2 = mul(s, h);
      return mean_all(w2);
    };
    auto res = gradcheck(forward, {x, w, gamma, beta});
    CAPTURE(res.worst);
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("finite differences: random 3-layer composition (spec oracle)") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng r = Rng::derive(77, seed);
    Tensor x = random_param({2, 6}, r);
    Tensor w1 = random_param({6, 6}, r);
    Tensor w2 = random_param({6, 6}, r);
    Tensor w3 = random_param({6, 3}, r);
    std::vector<std::int64_t> labels{0, 2};
    auto forward = [&] {
      Tensor h = tanh_act(matmul(x, w1));
      h = silu(matmul(h, w2));
      Tensor z = matmul(h, w3);
      return cross_entropy(z, labels);
    };
    auto res = gradcheck(forward, {x, w1, w2, w3});
    CHECK(res.max_rel_error < 1e-4);
  }
}

TEST_CASE("finite differences: kl, bmm, slice, cumsum, misc ops") {
  Rng r(31);
  Tensor zp = random_param({3, 4}, r);
  Tensor zq = random_param({3, 4}, r);
  auto fkl = [&] { return mean_all(kl_div_rows(zp, zq, KlInput::logits)); };
  CHECK(gradcheck(fkl, {zp, zq}).max_rel_error < 1e-4);

  Tensor a = random_param({2, 3, 4}, r);
  Tensor b = random_param({2, 4, 3}, r);
  auto fbmm = [&] { return mean_all(bmm(a, b)); };
  CHECK(gradcheck(fbmm, {a, b}).max_rel_error < 1e-4);
  auto fbmmt = [&] { return mean_all(tanh_act(bmm(a, reshape(b, {2, 3, 4}), true))); };
  CHECK(gradcheck(fbmmt, {a, b}).max_rel_error < 1e-4);

  Tensor c = random_param({2, 5, 6}, r);
  auto fmix = [&] {
    Tensor s = slice_last(c, 1, 3);
    Tensor cs = cumsum_seq(mul(s, s), true);
    Tensor e = exp_op(mul_scalar(cs, -0.3));
    Tensor ph = phi1(mul_scalar(s, 0.7));
    return mean_all(mul(e, ph));
  };
  CHECK(gradcheck(fmix, {c}).max_rel_error < 1e-4);

  Tensor d = random_param({3, 4, 5}, r);
  auto fred = [&] {
    Tensor m1 = mean_axis1(d);
    Tensor sl = sum_last(sin_op(cos_op(d)));
    return add(mean_all(m1), mul_scalar(mean_all(sl), 0.1));
  };
  CHECK(gradcheck(fred, {d}).max_rel_error < 1e-4);

  Tensor e1 = random_param({7}, r);
  Tensor x1 = random_param({3, 7}, r);
  auto fbias = [&] { return mean_all(softplus(add_bias(mul_gain(x1, e1), e1))); };
  CHECK(gradcheck(fbias, {e1, x1}).max_rel_error < 1e-4);
}

TEST_CASE("adamw: zero grad + zero decay leaves parameter unchanged") {
  Tensor p = Tensor::param({2}, {1.5, -2.5});
  opt::AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  opt::AdamW optim({p}, cfg);
  p.grad_mutable();  // zeros
  optim.step();
  CHECK(p.data()[0] == 1.5);
  CHECK(p.data()[1] == -2.5);
}

TEST_CASE("adamw: first step approximates -lr * sign(grad)") {
  Tensor p = Tensor::param({2}, {0.0, 0.0});
  opt::AdamWConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.0;
  opt::AdamW optim({p}, cfg);
  auto g = p.grad_mutable();
  g[0] = 0.37;
  g[1] = -4.2;
  optim.step();
  CHECK(p.data()[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(p.data()[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adamw: two steps match an independent reference evaluation") {
  // Reference: scalar AdamW recomputed longhand.
  const double lr = 0.004, b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 0.05;
  const double g1 = 0.7, g2 = -0.2;
  double w = 1.0, m = 0.0, v = 0.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * w);
  }

  Tensor p = Tensor::param({1}, {1.0});
  opt::AdamW optim({p}, {lr, b1, b2, eps, wd});
  p.grad_mutable()[0] = g1;
  optim.step();
  p.grad_mutable()[0] = g2;
  optim.step();
  CHECK(std::fabs(p.data()[0] - w) < 1e-12);
}

TEST_CASE("forward evaluation is bit-identical across reruns") {
  auto run = [] {
    Rng r(99);
    Tensor x = random_param({4, 8}, r);
    Tensor w = random_param({8, 8}, r);
    Tensor y = gelu(matmul(x, w));
    std::vector<double> out(y.data().begin(), y.data().end());
    return out;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("checkpoint round trip and error paths") {
  namespace fs = std::filesystem;
  const auto path = fs::temp_directory_path() / "ssmlab_ckpt_test.bin";
  Rng r(7);
  ckpt::NamedTensors named{
      {"layer0.w", random_param({3, 4}, r)},
      {"layer0.b", random_param({4}, r)},
      {"scalar", Tensor::from({}, {2.5})},
  };
  ckpt::save(path.string(), named);
  auto loaded = ckpt::load(path.string());
  REQUIRE(loaded.size() == 3);
  CHECK(loaded[0].first == "layer0.w");
  CHECK(loaded[1].second.shape() == Shape{4});
  for (std::size_t i = 0; i < named.size(); ++i)
    for (std::size_t j = 0; j < named[i].second.data().size(); ++j)
      CHECK(named[i].second.data()[j] == loaded[i].second.data()[j]);

  // Corrupt magic.
  {
    std::FILE* f = std::fopen(path.string().c_str(), "r+b");
    std::fputc('X', f);
    std::fclose(f);
  }
  CHECK_THROWS_AS((void)ckpt::load(path.string()), std::runtime_error);
  fs::remove(path);
}
