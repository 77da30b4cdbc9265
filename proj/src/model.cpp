#include "ssmlab/model/model.hpp"

#include <cmath>
#include <stdexcept>

#include "ssmlab/ops.hpp"
#include "ssmlab/rng.hpp"

namespace ssmlab::model {

using namespace ssmlab::ad;

std::string to_string(Variant v) {
  switch (v) {
    case Variant::s4: return "s4";
    case Variant::dss: return "dss";
    case Variant::s5: return "s5";
    case Variant::mega: return "mega";
    case Variant::mamba: return "mamba";
  }
  return "?";
}

Variant variant_from(const std::string& s) {
  if (s == "s4") return Variant::s4;
  if (s == "dss") return Variant::dss;
  if (s == "s5") return Variant::s5;
  if (s == "mega") return Variant::mega;
  if (s == "mamba") return Variant::mamba;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

void ModelSpec::validate() const {
  if (input_dim < 1 || model_dim < 1 || state_dim < 1 || n_layers < 1 || n_classes < 2)
    throw std::invalid_argument("ModelSpec: dimensions must be positive (classes >= 2)");
  if (dt <= 0.0) throw std::invalid_argument("ModelSpec: dt must be positive");
}

namespace {

struct Init {
  Rng rng;
  ckpt::NamedTensors* reg;

  Tensor uniform(const std::string& name, Shape shape, double bound) {
    std::vector<double> v(static_cast<std::size_t>(numel(shape)));
    for (auto& x : v) x = rng.uniform(-bound, bound);
    Tensor t = Tensor::param(std::move(shape), std::move(v));
    reg->emplace_back(name, t);
    return t;
  }
  Tensor fan_in(const std::string& name, std::int64_t in, std::int64_t out) {
    return uniform(name, {in, out}, 1.0 / std::sqrt(static_cast<double>(in)));
  }
  Tensor bias(const std::string& name, std::int64_t n, double fan) {
    return uniform(name, {n}, 1.0 / std::sqrt(fan));
  }
  Tensor constant(const std::string& name, Shape shape, double v) {
    std::vector<double> d(static_cast<std::size_t>(numel(shape)), v);
    Tensor t = Tensor::param(std::move(shape), std::move(d));
    reg->emplace_back(name, t);
    return t;
  }
  Tensor values(const std::string& name, Shape shape, std::vector<double> v) {
    Tensor t = Tensor::param(std::move(shape), std::move(v));
    reg->emplace_back(name, t);
    return t;
  }
};

Tensor linear(const Tensor& x2d, const Tensor& w, const Tensor& b) {
  return add_bias(matmul(x2d, w), b);
}

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
  spec.validate();
  Model m;
  m.spec_ = spec;
  Init init{Rng::derive(seed, 0xD0D0), &m.params_};
  const std::int64_t d = spec.model_dim;
  const std::int64_t h = spec.state_dim;
  const std::int64_t ffn = spec.ffn_dim > 0 ? spec.ffn_dim : 2 * d;

  m.embed_w = init.fan_in("embed.w", spec.input_dim, d);
  m.embed_b = init.bias("embed.b", d, static_cast<double>(spec.input_dim));
  m.embed_ln_g = init.constant("embed.ln.g", {d}, 1.0);
  m.embed_ln_b = init.constant("embed.ln.b", {d}, 0.0);

  for (std::int64_t l = 0; l < spec.n_layers; ++l) {
    Model::Block blk;
    const std::string p = "layer" + std::to_string(l) + ".";
    const double hb = 1.0 / std::sqrt(static_cast<double>(h));
    switch (spec.variant) {
      case Variant::s4: {
        // stable dense init: log-spaced decay rates on the diagonal plus a
        // small random mixing term
        std::vector<double> a(static_cast<std::size_t>(h * h));
        for (auto& v : a) v = init.rng.uniform(-0.1 * hb, 0.1 * hb);
        for (std::int64_t s = 0; s < h; ++s) {
          const double t = static_cast<double>(s) / std::max<std::int64_t>(1, h - 1);
          a[static_cast<std::size_t>(s * h + s)] = -std::exp(std::log(0.5) + t * std::log(8.0));
        }
        blk.s4_A = init.values(p + "ssm.A", {h, h}, std::move(a));
        blk.s4_B = init.constant(p + "ssm.B", {h}, 1.0);
        blk.ct_re = init.uniform(p + "ssm.C", {d, h}, hb);
        break;
      }
      case Variant::dss: {
        std::vector<double> lre(static_cast<std::size_t>(h));
        std::vector<double> lim(static_cast<std::size_t>(h), 0.0);
        for (std::int64_t s = 0; s < h; ++s) {
          const double t = static_cast<double>(s) / std::max<std::int64_t>(1, h - 1);
          lre[static_cast<std::size_t>(s)] =
              spec.complex_modes ? std::log(0.5) : std::log(0.2) + t * std::log(40.0);
          if (spec.complex_modes)
            lim[static_cast<std::size_t>(s)] = 3.141592653589793 * static_cast<double>(s);
        }
        blk.log_neg_re = init.values(p + "ssm.log_neg_re", {h}, std::move(lre));
        blk.lam_im = init.values(p + "ssm.lam_im", {h}, std::move(lim));
        if (!spec.complex_modes) blk.lam_im.set_requires_grad(false);
        blk.ct_re = init.uniform(p + "ssm.ct_re", {h, d}, hb);
        blk.ct_im = init.uniform(p + "ssm.ct_im", {h, d}, hb);
        break;
      }
      case Variant::s5: {
        std::vector<double> lre(static_cast<std::size_t>(h));
        std::vector<double> lim(static_cast<std::size_t>(h), 0.0);
        for (std::int64_t s = 0; s < h; ++s) {
          const double t = static_cast<double>(s) / std::max<std::int64_t>(1, h - 1);
          lre[static_cast<std::size_t>(s)] =
              spec.complex_modes ? std::log(0.5) : std::log(0.2) + t * std::log(40.0);
          if (spec.complex_modes)
            lim[static_cast<std::size_t>(s)] = 3.141592653589793 * static_cast<double>(s);
        }
        blk.log_neg_re = init.values(p + "ssm.log_neg_re", {h}, std::move(lre));
        blk.lam_im = init.values(p + "ssm.lam_im", {h}, std::move(lim));
        if (!spec.complex_modes) blk.lam_im.set_requires_grad(false);
        const double db = 1.0 / std::sqrt(static_cast<double>(d));
        blk.bt_re = init.uniform(p + "ssm.bt_re", {d, h}, db);
        blk.bt_im = init.uniform(p + "ssm.bt_im", {d, h}, db);
        blk.ct_re = init.uniform(p + "ssm.ct_re", {h, d}, hb);
        blk.ct_im = init.uniform(p + "ssm.ct_im", {h, d}, hb);
        break;
      }
      case Variant::mega: {
        blk.ema.d = d;
        blk.ema.h = h;
        blk.ema.alpha_raw = init.uniform(p + "ssm.alpha_raw", {d * h}, 2.0);
        blk.ema.delta_raw = init.values(p + "ssm.delta_raw", {d * h}, [&] {
          std::vector<double> v(static_cast<std::size_t>(d * h));
          for (auto& x : v) x = init.rng.uniform(-3.0, -1.0);  // long memory at init
          return v;
        }());
        blk.ema.beta = init.uniform(p + "ssm.beta", {d * h}, hb);
        blk.ema.eta = init.uniform(p + "ssm.eta", {d * h}, hb);
        blk.attn.wq = init.fan_in(p + "attn.wq", d, d);
        blk.attn.wk = init.fan_in(p + "attn.wk", d, d);
        blk.attn.wv = init.fan_in(p + "attn.wv", d, d);
        break;
      }
      case Variant::mamba: {
        blk.in_proj_w = init.fan_in(p + "in_proj.w", d, 4 * d);
        blk.in_proj_b = init.bias(p + "in_proj.b", 4 * d, static_cast<double>(d));
        const std::int64_t C = 2 * d;
        const double cb = 1.0 / std::sqrt(static_cast<double>(C));
        blk.s6.w_dt = init.uniform(p + "ssm.w_dt", {C, 1}, cb);
        // softplus(b_dt) ~ 0.05 at init
        blk.s6.b_dt = init.constant(p + "ssm.b_dt", {1}, std::log(std::expm1(0.05)));
        blk.s6.w_B = init.uniform(p + "ssm.w_B", {C, h}, cb);
        blk.s6.w_C = init.uniform(p + "ssm.w_C", {C, h}, cb);
        std::vector<double> ll(static_cast<std::size_t>(h));
        for (std::int64_t s = 0; s < h; ++s)
          ll[static_cast<std::size_t>(s)] = std::log(static_cast<double>(s + 1));
        blk.s6.lambda_log = init.values(p + "ssm.lambda_log", {h}, std::move(ll));
        break;
      }
    }

    if (spec.ads) {
      ssm::AdsLayer ads;
      const std::int64_t ads_dim = spec.variant == Variant::mamba ? 2 * d : d;
      ads.w1 = init.fan_in(p + "ads.w1", ads_dim, ads_dim);
      ads.b1 = init.bias(p + "ads.b1", ads_dim, static_cast<double>(ads_dim));
      ads.w2 = init.fan_in(p + "ads.w2", ads_dim, ads_dim);
      ads.b2 = init.bias(p + "ads.b2", ads_dim, static_cast<double>(ads_dim));
      ads.act = *spec.ads;
      blk.ads = ads;
    }

    switch (spec.variant) {
      case Variant::s4:
      case Variant::dss:
        blk.lin1_w = init.fan_in(p + "linear.w", d, d);
        blk.lin1_b = init.bias(p + "linear.b", d, static_cast<double>(d));
        blk.ln1_g = init.constant(p + "ln.g", {d}, 1.0);
        blk.ln1_b = init.constant(p + "ln.b", {d}, 0.0);
        break;
      case Variant::s5:
        blk.ln1_g = init.constant(p + "ln.g", {d}, 1.0);
        blk.ln1_b = init.constant(p + "ln.b", {d}, 0.0);
        break;
      case Variant::mega:
        blk.ln1_g = init.constant(p + "ln1.g", {d}, 1.0);
        blk.ln1_b = init.constant(p + "ln1.b", {d}, 0.0);
        blk.lin1_w = init.fan_in(p + "ffn.w1", d, ffn);
        blk.lin1_b = init.bias(p + "ffn.b1", ffn, static_cast<double>(d));
        blk.lin2_w = init.fan_in(p + "ffn.w2", ffn, d);
        blk.lin2_b = init.bias(p + "ffn.b2", d, static_cast<double>(ffn));
        blk.ln2_g = init.constant(p + "ln2.g", {d}, 1.0);
        blk.ln2_b = init.constant(p + "ln2.b", {d}, 0.0);
        break;
      case Variant::mamba:
        blk.lin1_w = init.fan_in(p + "linear.w", 2 * d, d);
        blk.lin1_b = init.bias(p + "linear.b", d, static_cast<double>(2 * d));
        blk.ln1_g = init.constant(p + "ln.g", {d}, 1.0);
        blk.ln1_b = init.constant(p + "ln.b", {d}, 0.0);
        break;
    }
    m.blocks_.push_back(std::move(blk));
  }

  m.head_w = init.fan_in("head.w", d, spec.n_classes);
  m.head_b = init.bias("head.b", spec.n_classes, static_cast<double>(d));
  return m;
}

namespace {

void tap(std::vector<ProbeRecord>* probes, const char* component, std::int64_t layer,
         const Tensor& in, const Tensor& out) {
  if (probes) probes->push_back({component, layer, in, out});
}

// Complex kernel K[m, c] = Re(sum_s C[s,c] abar_s^m bbar_s) from re/im parts.
Tensor diag_kernel(const ssm::CPair& abar_pow, const ssm::CPair& bbar, const Tensor& ct_re,
                   const Tensor& ct_im) {
  // abar_pow: [L,h] powers; bbar: [h]; ct: [h,d]
  Tensor zr = sub(mul_gain(abar_pow.re, bbar.re), mul_gain(abar_pow.im, bbar.im));
  Tensor zi = add(mul_gain(abar_pow.re, bbar.im), mul_gain(abar_pow.im, bbar.re));
  return sub(matmul(zr, ct_re), matmul(zi, ct_im));
}

// Powers abar^m for m = 0..L-1 as a CPair of [L,h]: exp(m * w).
ssm::CPair power_table(const ssm::CPair& w, std::int64_t L, std::int64_t h) {
  std::vector<double> iota(static_cast<std::size_t>(L));
  for (std::int64_t m = 0; m < L; ++m) iota[static_cast<std::size_t>(m)] = static_cast<double>(m);
  Tensor iota_t = Tensor::from({L, 1}, std::move(iota));
  Tensor mw_re = matmul(iota_t, reshape(w.re, {1, h}));
  Tensor mw_im = matmul(iota_t, reshape(w.im, {1, h}));
  return ssm::cexp({mw_re, mw_im});
}

}  // namespace

Tensor Model::run_block(const Block& blk, const Tensor& x, std::int64_t layer,
                        std::vector<ProbeRecord>* probes) const {
  const std::int64_t B = x.shape()[0], L = x.shape()[1], d = spec_.model_dim;
  const std::int64_t h = spec_.state_dim;
  switch (spec_.variant) {
    case Variant::s4: {
      auto [Abar, Bbar] = ssm::bilinear_disc_dense(blk.s4_A, blk.s4_B, spec_.dt);
      Tensor K = ssm::dense_power_kernel(Abar, Bbar, blk.ct_re, L);
      Tensor y = ssm::causal_conv_fixed(x, K);
      tap(probes, "ssm", layer, x, y);
      if (blk.ads) {
        Tensor ya = blk.ads->forward(y);
        tap(probes, "ads", layer, y, ya);
        y = ya;
      }
      Tensor g1 = gelu(y);
      Tensor lin = linear(g1, blk.lin1_w, blk.lin1_b);
      tap(probes, "linear", layer, g1, lin);
      Tensor g2 = gelu(lin);
      return layer_norm(g2, blk.ln1_g, blk.ln1_b);
    }
    case Variant::dss: {
      Tensor lam_re = neg(exp_op(blk.log_neg_re));
      ssm::CPair w{mul_scalar(lam_re, spec_.dt), mul_scalar(blk.lam_im, spec_.dt)};
      ssm::CPair pow = power_table(w, L, h);
      ssm::CPair bbar;
      if (spec_.dss_disc == ssm::DiscTag::dss_eq7) {
        // (e^w - 1) / (lambda (e^{Lw} - 1))
        ssm::CPair num = cadd_scalar(ssm::cexp(w), -1.0);
        ssm::CPair eL = cadd_scalar(ssm::cexp(cscale(w, static_cast<double>(L))), -1.0);
        bbar = ssm::cdiv(num, ssm::cmul({lam_re, blk.lam_im}, eL));
      } else {
        // zoh with unit B: dt * (e^w - 1) / w
        ssm::CPair num = cadd_scalar(ssm::cexp(w), -1.0);
        bbar = cscale(ssm::cdiv(num, w), spec_.dt);
      }
      Tensor K = diag_kernel(pow, bbar, blk.ct_re, blk.ct_im);
      Tensor y = ssm::causal_conv_fixed(x, K);
      tap(probes, "ssm", layer, x, y);
      if (blk.ads) {
        Tensor ya = blk.ads->forward(y);
        tap(probes, "ads", layer, y, ya);
        y = ya;
      }
      Tensor g1 = gelu(y);
      Tensor lin = linear(g1, blk.lin1_w, blk.lin1_b);
      tap(probes, "linear", layer, g1, lin);
      Tensor g2 = gelu(lin);
      return layer_norm(g2, blk.ln1_g, blk.ln1_b);
    }
    case Variant::s5: {
      Tensor lam_re = neg(exp_op(blk.log_neg_re));
      ssm::CPair w{mul_scalar(lam_re, spec_.dt), mul_scalar(blk.lam_im, spec_.dt)};
      ssm::CPair abar = ssm::cexp(w);
      // Bbar^T = B^T . diag(dt * phi1(w)): project u then scale columns.
      ssm::CPair scale_c = ssm::cdiv(cadd_scalar(ssm::cexp(w), -1.0), w);
      Tensor vr = matmul(x, blk.bt_re);
      Tensor vi = matmul(x, blk.bt_im);
      // complex column gain: v * (dt*phi1) -- note (e^w-1)/w * dt == dt*phi1(w)
      Tensor vr2 = sub(mul_gain(vr, scale_c.re), mul_gain(vi, scale_c.im));
      Tensor vi2 = add(mul_gain(vr, scale_c.im), mul_gain(vi, scale_c.re));
      vr2 = mul_scalar(vr2, spec_.dt);
      vi2 = mul_scalar(vi2, spec_.dt);
      auto [xr, xi] = ssm::cdiag_recurrence(abar.re, abar.im, vr2, vi2, /*parallel=*/true);
      Tensor y = sub(matmul(xr, blk.ct_re), matmul(xi, blk.ct_im));
      tap(probes, "ssm", layer, x, y);
      if (blk.ads) {
        Tensor ya = blk.ads->forward(y);
        tap(probes, "ads", layer, y, ya);
        y = ya;
      }
      return layer_norm(y, blk.ln1_g, blk.ln1_b);
    }
    case Variant::mega: {
      Tensor y = blk.ema.forward(x);
      tap(probes, "ssm", layer, x, y);
      if (blk.ads) {
        Tensor ya = blk.ads->forward(y);
        tap(probes, "ads", layer, y, ya);
        y = ya;
      }
      Tensor at = blk.attn.forward(y, x);
      tap(probes, "attention", layer, y, at);
      Tensor n1 = layer_norm(at, blk.ln1_g, blk.ln1_b);
      Tensor f1 = silu(linear(n1, blk.lin1_w, blk.lin1_b));
      Tensor f2 = linear(f1, blk.lin2_w, blk.lin2_b);
      tap(probes, "linear", layer, n1, f2);
      return layer_norm(f2, blk.ln2_g, blk.ln2_b);
    }
    case Variant::mamba: {
      Tensor proj = linear(x, blk.in_proj_w, blk.in_proj_b);
      Tensor xin = slice_last(proj, 0, 2 * d);
      Tensor gate = slice_last(proj, 2 * d, 2 * d);
      Tensor v = blk.s6.forward(xin);
      tap(probes, "ssm", layer, xin, v);
      if (blk.ads) {
        Tensor va = blk.ads->forward(v);
        tap(probes, "ads", layer, v, va);
        v = va;
      }
      Tensor gated = mul(v, silu(gate));
      Tensor lin = linear(gated, blk.lin1_w, blk.lin1_b);
      tap(probes, "linear", layer, gated, lin);
      return layer_norm(lin, blk.ln1_g, blk.ln1_b);
    }
  }
  throw std::logic_error("unreachable");
}

Tensor Model::forward(const Tensor& batch) const { return forward(batch, nullptr); }

Tensor Model::forward(const Tensor& batch, std::vector<ProbeRecord>* probes) const {
  if (batch.shape().size() != 3 || batch.shape()[2] != spec_.input_dim)
    throw std::invalid_argument("Model::forward: expected [B,L," +
                                std::to_string(spec_.input_dim) + "], got " +
                                shape_str(batch.shape()));
  const std::int64_t B = batch.shape()[0], L = batch.shape()[1];
  Tensor x = layer_norm(linear(batch, embed_w, embed_b), embed_ln_g, embed_ln_b);
  for (std::size_t l = 0; l < blocks_.size(); ++l)
    x = run_block(blocks_[l], x, static_cast<std::int64_t>(l), probes);
  Tensor pooled = mean_axis1(x);  // mean over positions before the head
  return linear(pooled, head_w, head_b);
}

std::vector<ad::Tensor> Model::parameter_tensors() const {
  std::vector<ad::Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::int64_t Model::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

}  // namespace ssmlab::model
