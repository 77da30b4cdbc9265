#include "ssmlab/adv/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "ssmlab/ops.hpp"

namespace ssmlab::adv {

using namespace ssmlab::ad;

void AttackConfig::validate() const {
  if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
  if (epsilon > 0.0 && (alpha <= 0.0 || alpha > epsilon))
    throw std::invalid_argument("AttackConfig: need 0 < alpha <= epsilon");
  if (steps < 1) throw std::invalid_argument("AttackConfig: steps must be >= 1");
  if (clamp_lo >= clamp_hi) throw std::invalid_argument("AttackConfig: bad clamp range");
}

std::string to_string(Framework f) {
  switch (f) {
    case Framework::st: return "st";
    case Framework::pgd_at: return "pgd_at";
    case Framework::trades: return "trades";
  }
  return "?";
}

Framework framework_from(const std::string& s) {
  if (s == "st") return Framework::st;
  if (s == "pgd_at") return Framework::pgd_at;
  if (s == "trades") return Framework::trades;
  throw std::invalid_argument("unknown framework '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1 || batch_size < 1) throw std::invalid_argument("TrainConfig: bad sizes");
  if (framework == Framework::trades && beta <= 0.0)
    throw std::invalid_argument("TrainConfig: trades requires beta > 0");
  if (framework != Framework::st) train_attack.validate();
}

double sign0(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

namespace {

// Attacks freeze the model: parameter gradients are neither needed nor
// accumulated while the input is being perturbed.
class ParamFreeze {
 public:
  explicit ParamFreeze(const model::Model& m) {
    for (const auto& [name, t] : m.parameters()) {
      Tensor tt = t;
      if (tt.requires_grad()) {
        frozen_.push_back(tt);
        tt.set_requires_grad(false);
      }
    }
  }
  ~ParamFreeze() {
    for (auto& t : frozen_) t.set_requires_grad(true);
  }

 private:
  std::vector<Tensor> frozen_;
};

Tensor clamp_box(const Tensor& u_adv, const Tensor& u_ref, double eps, double lo, double hi) {
  std::vector<double> out(u_adv.data().begin(), u_adv.data().end());
  const auto ref = u_ref.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double low = std::max(lo, ref[i] - eps);
    const double high = std::min(hi, ref[i] + eps);
    out[i] = std::clamp(out[i], low, high);
  }
  return Tensor::from(u_adv.shape(), std::move(out));
}

Tensor ascend_sign(const Tensor& u_adv, std::span<const double> grad, double step) {
  std::vector<double> out(u_adv.data().begin(), u_adv.data().end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += step * sign0(grad[i]);
  return Tensor::from(u_adv.shape(), std::move(out));
}

}  // namespace

Tensor fgsm(const model::Model& m, const Tensor& u, const std::vector<std::int64_t>& labels,
            double epsilon, double clamp_lo, double clamp_hi) {
  if (epsilon == 0.0) return u.detach();
  ParamFreeze freeze(m);
  Tensor leaf = u.detach();
  leaf.set_requires_grad(true);
  {
    Graph g;
    Tensor loss = cross_entropy(m.forward(leaf), labels);
    g.backward(loss);
  }
  Tensor out = ascend_sign(leaf, leaf.grad(), epsilon);
  return clamp_box(out, u, epsilon, clamp_lo, clamp_hi);
}

Tensor pgd_attack(const model::Model& m, const Tensor& u, const std::vector<std::int64_t>& labels,
                  const AttackConfig& cfg, Rng* rng) {
  cfg.validate();
  if (cfg.epsilon == 0.0) return u.detach();
  ParamFreeze freeze(m);
  Tensor adv = u.detach();
  if (cfg.random_init && rng) {
    std::vector<double> start(adv.data().begin(), adv.data().end());
    for (auto& v : start) v += rng->uniform(-cfg.epsilon, cfg.epsilon);
    adv = clamp_box(Tensor::from(adv.shape(), std::move(start)), u, cfg.epsilon, cfg.clamp_lo,
                    cfg.clamp_hi);
  }
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor leaf = adv.detach();
    leaf.set_requires_grad(true);
    {
      Graph g;
      Tensor loss = cross_entropy(m.forward(leaf), labels);
      g.backward(loss);
    }
    adv = clamp_box(ascend_sign(leaf, leaf.grad(), cfg.alpha), u, cfg.epsilon, cfg.clamp_lo,
                    cfg.clamp_hi);
  }
  return adv;
}

Tensor trades_attack(const model::Model& m, const Tensor& u, const AttackConfig& cfg,
                     bool reverse_kl, Rng* rng) {
  cfg.validate();
  if (cfg.epsilon == 0.0) return u.detach();
  ParamFreeze freeze(m);
  Tensor clean_logits = m.forward(u.detach()).detach();
  Tensor adv = u.detach();
  if (cfg.random_init && rng) {
    std::vector<double> start(adv.data().begin(), adv.data().end());
    for (auto& v : start) v += rng->uniform(-cfg.epsilon, cfg.epsilon);
    adv = clamp_box(Tensor::from(adv.shape(), std::move(start)), u, cfg.epsilon, cfg.clamp_lo,
                    cfg.clamp_hi);
  }
  for (int step = 0; step < cfg.steps; ++step) {
    Tensor leaf = adv.detach();
    leaf.set_requires_grad(true);
    {
      Graph g;
      Tensor adv_logits = m.forward(leaf);
      Tensor kl = reverse_kl ? kl_div_rows(adv_logits, clean_logits, KlInput::logits)
                             : kl_div_rows(clean_logits, adv_logits, KlInput::logits);
      g.backward(mean_all(kl));
    }
    adv = clamp_box(ascend_sign(leaf, leaf.grad(), cfg.alpha), u, cfg.epsilon, cfg.clamp_lo,
                    cfg.clamp_hi);
  }
  return adv;
}

namespace {

Tensor gather_batch(const Dataset& data, const std::vector<std::int64_t>& idx, std::int64_t lo,
                    std::int64_t hi, std::vector<std::int64_t>* labels) {
  const std::int64_t L = data.inputs.shape()[1];
  const std::int64_t c = data.inputs.shape()[2];
  const std::int64_t b = hi - lo;
  std::vector<double> buf(static_cast<std::size_t>(b * L * c));
  const auto src = data.inputs.data();
  for (std::int64_t i = 0; i < b; ++i) {
    const std::int64_t row = idx[static_cast<std::size_t>(lo + i)];
    std::copy(src.begin() + row * L * c, src.begin() + (row + 1) * L * c,
              buf.begin() + i * L * c);
    if (labels) labels->push_back(data.labels[static_cast<std::size_t>(row)]);
  }
  return Tensor::from({b, L, c}, std::move(buf));
}

double batch_accuracy(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  const std::int64_t B = logits.shape()[0], K = logits.shape()[1];
  std::int64_t correct = 0;
  for (std::int64_t i = 0; i < B; ++i) {
    std::int64_t arg = 0;
    double best = logits.at({i, 0});
    for (std::int64_t k = 1; k < K; ++k)
      if (logits.at({i, k}) > best) {
        best = logits.at({i, k});
        arg = k;
      }
    if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(B);
}

}  // namespace

EpochMetrics train_epoch(model::Model& m, opt::AdamW& optim, const Dataset& data,
                         const TrainConfig& cfg, std::int64_t epoch, double lr_scale) {
  const std::int64_t n = data.size();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng shuffle_rng = Rng::derive(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch));
  for (std::int64_t i = n - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(shuffle_rng.uniform_u64(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  Rng attack_rng = Rng::derive(cfg.seed, 50000 + static_cast<std::uint64_t>(epoch));
  AttackConfig train_attack = cfg.train_attack;
  if (cfg.epsilon_warmup_epochs > 0 && epoch < cfg.epsilon_warmup_epochs) {
    const double ramp = static_cast<double>(epoch + 1) /
                        static_cast<double>(cfg.epsilon_warmup_epochs + 1);
    train_attack.epsilon *= ramp;
    train_attack.alpha *= ramp;
  }

  double loss_sum = 0.0, acc_sum = 0.0;
  std::int64_t batches = 0;
  for (std::int64_t lo = 0; lo < n; lo += cfg.batch_size) {
    const std::int64_t hi = std::min(n, lo + cfg.batch_size);
    std::vector<std::int64_t> labels;
    Tensor x = gather_batch(data, idx, lo, hi, &labels);

    double loss_val = 0.0, acc = 0.0;
    switch (cfg.framework) {
      case Framework::st: {
        Graph g;
        Tensor logits = m.forward(x);
        Tensor loss = cross_entropy(logits, labels);
        loss_val = loss.item();
        acc = batch_accuracy(logits, labels);
        g.backward(loss);
        break;
      }
      case Framework::pgd_at: {
        Tensor x_adv = pgd_attack(m, x, labels, train_attack, &attack_rng);
        Graph g;
        Tensor logits = m.forward(x_adv);
        Tensor loss = cross_entropy(logits, labels);
        loss_val = loss.item();
        acc = batch_accuracy(logits, labels);
        g.backward(loss);
        break;
      }
      case Framework::trades: {
        Tensor x_adv =
            trades_attack(m, x, train_attack, cfg.trades_reverse_kl, &attack_rng);
        Graph g;
        Tensor clean_logits = m.forward(x);
        Tensor adv_logits = m.forward(x_adv);
        Tensor ce = cross_entropy(clean_logits, labels);
        Tensor kl = cfg.trades_reverse_kl
                        ? kl_div_rows(adv_logits, clean_logits, KlInput::logits)
                        : kl_div_rows(clean_logits, adv_logits, KlInput::logits);
        Tensor loss = add(ce, mul_scalar(mean_all(kl), cfg.beta));
        loss_val = loss.item();
        acc = batch_accuracy(clean_logits, labels);
        g.backward(loss);
        break;
      }
    }
    if (!std::isfinite(loss_val))
      throw std::runtime_error("train_epoch: loss diverged (NaN/Inf) at epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(batches) +
                               "; aborting");
    optim.step(lr_scale);
    loss_sum += loss_val;
    acc_sum += acc;
    ++batches;
  }
  return {loss_sum / static_cast<double>(batches), acc_sum / static_cast<double>(batches)};
}

double evaluate(const model::Model& m, const Dataset& data,
                const std::optional<AttackConfig>& attack, std::uint64_t seed,
                std::int64_t batch_size) {
  const std::int64_t n = data.size();
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::int64_t correct_n = 0;
  std::int64_t batch_id = 0;
  for (std::int64_t lo = 0; lo < n; lo += batch_size, ++batch_id) {
    const std::int64_t hi = std::min(n, lo + batch_size);
    std::vector<std::int64_t> labels;
    Tensor x = gather_batch(data, idx, lo, hi, &labels);
    if (attack && attack->epsilon > 0.0) {
      Rng rng = Rng::derive(seed, 90000 + static_cast<std::uint64_t>(batch_id));
      x = pgd_attack(m, x, labels, *attack, &rng);
    }
    Tensor logits = m.forward(x);
    correct_n += static_cast<std::int64_t>(
        std::llround(batch_accuracy(logits, labels) * static_cast<double>(hi - lo)));
  }
  return static_cast<double>(correct_n) / static_cast<double>(n);
}

BestLastDiff select_best_last(const std::vector<EpochRecord>& records,
                              double (*metric)(const EpochRecord&)) {
  if (records.empty()) throw std::invalid_argument("select_best_last: empty record");
  BestLastDiff r;
  r.best = metric(records.front());
  r.best_epoch = records.front().epoch;
  for (const auto& rec : records) {
    if (metric(rec) > r.best) {
      r.best = metric(rec);
      r.best_epoch = rec.epoch;
    }
  }
  r.last = metric(records.back());
  r.diff = r.best - r.last;
  return r;
}

double metric_test_ra(const EpochRecord& r) { return r.test_ra; }
double metric_test_ca(const EpochRecord& r) { return r.test_ca; }

std::string metrics_csv(const std::vector<EpochRecord>& records, std::uint64_t seed) {
  std::string s = "epoch,split,attack,loss,accuracy,seed,wall_time_s\n";
  char buf[256];
  auto row = [&](std::int64_t epoch, const char* split, const char* attack, double loss,
                 bool has_loss, double acc, double wall) {
    if (has_loss)
      std::snprintf(buf, sizeof(buf), "%lld,%s,%s,%.17g,%.17g,%llu,%.17g\n",
                    static_cast<long long>(epoch), split, attack, loss, acc,
                    static_cast<unsigned long long>(seed), wall);
    else
      std::snprintf(buf, sizeof(buf), "%lld,%s,%s,,%.17g,%llu,%.17g\n",
                    static_cast<long long>(epoch), split, attack, acc,
                    static_cast<unsigned long long>(seed), wall);
    s += buf;
  };
  for (const auto& r : records) {
    row(r.epoch, "train", "none", r.train_loss, true, r.train_acc, r.wall_time_s);
    row(r.epoch, "test", "none", 0.0, false, r.test_ca, r.wall_time_s);
    row(r.epoch, "train", "pgd", 0.0, false, r.train_ra, r.wall_time_s);
    row(r.epoch, "test", "pgd", 0.0, false, r.test_ra, r.wall_time_s);
  }
  return s;
}

}  // namespace ssmlab::adv
