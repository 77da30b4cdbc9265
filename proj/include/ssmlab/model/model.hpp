#pragma once
// The five sequence classifiers: S4 (dense bilinear SSM), DSS (diagonal
// exp-form SSM), S5 (MIMO diagonal SSM with parallel scan), Mega (damped EMA
// + single-head attention + FFN), and Mamba (data-dependent SSM with gated
// expansion). Block layouts:
//
//   embed:  Linear(input_dim, d) + LayerNorm(d)
//   s4:     S4 SSM   / GeLU / Linear(d,d) / GeLU / LayerNorm(d)
//   dss:    DSS SSM  / GeLU / Linear(d,d) / GeLU / LayerNorm(d)
//   s5:     S5 SSM   / LayerNorm(d)            (no position-wise linear)
//   mega:   EMA / Attention / LayerNorm / Linear(d,ffn) / SiLU /
//           Linear(ffn,d) / LayerNorm            (the attention softmax is
//           the block's row normalization stage)
//   mamba:  in-proj to 2d (x and gate) / selective SSM / SiLU gate /
//           Linear(2d,d) / LayerNorm(d)
//   head:   mean over positions, Linear(d, n_classes)
//
// An optional adaptive-scaling stage is inserted immediately after the SSM
// op of every block. Probes capture the sequences entering and leaving each
// ssm / linear / attention / ads component per layer.

#include <optional>
#include <string>
#include <vector>

#include "ssmlab/checkpoint.hpp"
#include "ssmlab/ssm/layers.hpp"
#include "ssmlab/tensor.hpp"

namespace ssmlab::model {

using ad::Tensor;

enum class Variant { s4, dss, s5, mega, mamba };
std::string to_string(Variant v);
Variant variant_from(const std::string& s);

struct ModelSpec {
  Variant variant = Variant::dss;
  std::int64_t input_dim = 1;
  std::int64_t model_dim = 128;
  std::int64_t state_dim = 32;
  std::int64_t n_layers = 2;
  std::int64_t n_classes = 10;
  std::int64_t ffn_dim = 0;  // mega FFN width; 0 = 2 * model_dim
  double dt = 0.01;          // fixed step size of the fixed-parameter SSMs
  std::optional<ssm::Activation> ads;           // none unless set
  ssm::DiscTag dss_disc = ssm::DiscTag::dss_eq7;  // dss_eq7 (default) or zoh
  bool complex_modes = true;  // false pins diagonal states to the real axis

  void validate() const;  // throws std::invalid_argument
};

struct ProbeRecord {
  std::string component;  // "ssm", "linear", "attention", "ads"
  std::int64_t layer = 0;
  Tensor in, out;         // [B,L,d] sequences entering/leaving the component
};

class Model {
 public:
  Tensor forward(const Tensor& batch) const;  // [B,L,input_dim] -> [B,K]
  Tensor forward(const Tensor& batch, std::vector<ProbeRecord>* probes) const;

  const ModelSpec& spec() const { return spec_; }
  ckpt::NamedTensors& parameters() { return params_; }
  const ckpt::NamedTensors& parameters() const { return params_; }
  std::vector<ad::Tensor> parameter_tensors() const;
  std::int64_t parameter_count() const;

 private:
  friend Model build_model(const ModelSpec&, std::uint64_t);

  struct Block {
    // fixed-parameter SSM pieces
    Tensor s4_A, s4_B;                     // dense [h,h], [h]
    Tensor log_neg_re, lam_im;             // diagonal [h]
    Tensor ct_re, ct_im;                   // output map [h,d] (re/im)
    Tensor bt_re, bt_im;                   // s5 input map [d,h] (re/im)
    ssm::EmaLayer ema;                     // mega
    ssm::S6Layer s6;                       // mamba
    Tensor in_proj_w, in_proj_b;           // mamba [d,4d],[4d] (x and gate)
    ssm::AttentionLayer attn;              // mega
    Tensor lin1_w, lin1_b, lin2_w, lin2_b; // block linears
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;     // layer norms
    std::optional<ssm::AdsLayer> ads;
  };

  Tensor run_block(const Block& blk, const Tensor& x, std::int64_t layer,
                   std::vector<ProbeRecord>* probes) const;

  ModelSpec spec_;
  Tensor embed_w, embed_b, embed_ln_g, embed_ln_b;
  std::vector<Block> blocks_;
  Tensor head_w, head_b;
  ckpt::NamedTensors params_;
};

// Deterministic initialization: same (spec, seed) gives bit-identical
// parameters. Throws on invalid specs.
Model build_model(const ModelSpec& spec, std::uint64_t seed);

}  // namespace ssmlab::model
