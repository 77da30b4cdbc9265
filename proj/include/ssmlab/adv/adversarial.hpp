#pragma once
// l-inf attacks (FGSM, PGD) and the training frameworks: standard training,
// PGD adversarial training, and TRADES. Attacks treat the model as frozen:
// gradients are taken w.r.t. the input only; the perturbation update itself
// is not differentiated through.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ssmlab/model/model.hpp"
#include "ssmlab/optim.hpp"
#include "ssmlab/rng.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab::adv {

using ad::Tensor;

struct AttackConfig {
  double epsilon = 0.3;   // l-inf budget
  double alpha = 0.04;    // step size
  int steps = 10;
  bool random_init = true;
  double clamp_lo = 0.0, clamp_hi = 1.0;  // data domain

  void validate() const;  // 0 < alpha <= epsilon, steps >= 1 (epsilon 0 ok)
};

enum class Framework { st, pgd_at, trades };
std::string to_string(Framework f);
Framework framework_from(const std::string& s);

struct TrainConfig {
  Framework framework = Framework::st;
  std::int64_t epochs = 20;
  std::int64_t batch_size = 128;
  opt::AdamWConfig optimizer;
  double beta = 1.0;  // TRADES coefficient
  bool trades_reverse_kl = false;  // default KL(clean || adv)
  std::uint64_t seed = 0;
  AttackConfig train_attack;  // used by pgd_at / trades inner maximization
  bool cosine_schedule = true;
  // Ramp the training attack budget linearly over the first N epochs
  // (stabilizes adversarial training from a random initialization); the
  // evaluation budget is never scaled. 0 disables.
  std::int64_t epsilon_warmup_epochs = 0;

  void validate() const;
};

struct Dataset {
  Tensor inputs;                     // [N, L, c]
  std::vector<std::int64_t> labels;  // [N]
  std::int64_t size() const { return inputs.defined() ? inputs.shape()[0] : 0; }
};

// sign(0) = 0.
double sign0(double v);

// u' = clamp(u + eps * sign(grad_u CE)); ||u' - u||_inf <= eps.
Tensor fgsm(const model::Model& m, const Tensor& u, const std::vector<std::int64_t>& labels,
            double epsilon, double clamp_lo = 0.0, double clamp_hi = 1.0);

// Iterated signed-gradient ascent with per-step projection onto the
// eps-ball and clamp to the data range; optional uniform random start.
// `rng` is consumed only when cfg.random_init is set.
Tensor pgd_attack(const model::Model& m, const Tensor& u, const std::vector<std::int64_t>& labels,
                  const AttackConfig& cfg, Rng* rng = nullptr);

// TRADES inner maximization: ascent on KL(p_clean || p(u')) (or reversed).
Tensor trades_attack(const model::Model& m, const Tensor& u,
                     const AttackConfig& cfg, bool reverse_kl, Rng* rng = nullptr);

struct EpochMetrics {
  double train_loss = 0.0;
  double train_acc = 0.0;
};

// One epoch over `data` with a seeded shuffle (seed derived from
// cfg.seed and `epoch`). Aborts with std::runtime_error on NaN loss.
EpochMetrics train_epoch(model::Model& m, opt::AdamW& optim, const Dataset& data,
                         const TrainConfig& cfg, std::int64_t epoch, double lr_scale);

// Accuracy over the set; with an attack config, every batch is perturbed
// independently (fresh PGD per batch).
double evaluate(const model::Model& m, const Dataset& data,
                const std::optional<AttackConfig>& attack, std::uint64_t seed,
                std::int64_t batch_size = 256);

struct EpochRecord {
  std::int64_t epoch = 0;
  double train_loss = 0.0, train_acc = 0.0;
  double test_ca = 0.0;
  double train_ra = 0.0;
  double test_ra = 0.0;
  double wall_time_s = 0.0;
};

struct BestLastDiff {
  double best = 0.0, last = 0.0, diff = 0.0;
  std::int64_t best_epoch = 0;
};

// Best checkpoint selection by highest test RA; diff = best - last.
BestLastDiff select_best_last(const std::vector<EpochRecord>& records,
                              double (*metric)(const EpochRecord&));

double metric_test_ra(const EpochRecord& r);
double metric_test_ca(const EpochRecord& r);

// CSV with header: epoch,split,attack,loss,accuracy,seed,wall_time_s.
// Floats carry 17 significant digits.
std::string metrics_csv(const std::vector<EpochRecord>& records, std::uint64_t seed);

}  // namespace ssmlab::adv
