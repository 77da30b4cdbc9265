#pragma once
// AdamW with decoupled weight decay and bias-corrected moments, plus the
// cosine learning-rate schedule used by the experiment presets.

#include <cstdint>
#include <vector>

#include "ssmlab/tensor.hpp"

namespace ssmlab::opt {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 2e-4;
};

class AdamW {
 public:
  AdamW(std::vector<ad::Tensor> params, AdamWConfig cfg);

  // Applies one update from the gradients currently stored on the parameters,
  // then zeroes them. `lr_scale` multiplies cfg.lr (schedules).
  void step(double lr_scale = 1.0);
  void zero_grad();

  std::int64_t step_count() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamWConfig cfg_;
  std::int64_t t_ = 0;
};

// Cosine decay from 1 at step 0 to 0 at `total` (the paper presets schedule
// per epoch).
double cosine_lr_scale(std::int64_t step, std::int64_t total);

}  // namespace ssmlab::opt
