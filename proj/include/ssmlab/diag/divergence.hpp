#pragma once
// Per-component divergence between clean and adversarial feature sequences:
// MSE (1/L)||f' - f||_F^2 and KL between sequence-softmaxed columns,
// measured on the features entering ("before") and leaving ("after") every
// probed component, averaged over layers and the dataset, per split.
//
// change = after - before; change_rate = change / before (null when the
// before-divergence is 0). The *_rel fields additionally normalize the raw
// divergences by the dataset-mean Frobenius norm of the clean feature
// sequences entering the component, making runs comparable.

#include <optional>
#include <string>
#include <vector>

#include "ssmlab/adv/adversarial.hpp"
#include "ssmlab/model/model.hpp"

namespace ssmlab::diag {

// Softmax over the sequence dimension: out[k,j] = exp(f[k,j]) / sum_i exp(f[i,j]).
// f is row-major [L x d].
std::vector<double> seq_softmax(const double* f, std::size_t L, std::size_t d);

// (1/L) ||f' - f||_F^2.
double mse_seq(const double* f, const double* fp, std::size_t L, std::size_t d);

// Mean over the d feature columns of KL(S(f)_col || S(f')_col), with the
// 1e-12 probability floor.
double kl_seq(const double* f, const double* fp, std::size_t L, std::size_t d);

struct DivergenceRow {
  std::string component;          // ssm / linear / attention / ads
  std::int64_t layers_averaged = 0;
  std::string split;              // train / test
  std::string metric;             // kl / mse
  double before = 0.0, after = 0.0;
  double change = 0.0;
  std::optional<double> change_rate;  // null when before == 0
  double before_rel = 0.0, after_rel = 0.0;
};

struct DivergenceReport {
  std::vector<DivergenceRow> rows;
  double clean_feature_norm = 0.0;  // dataset-mean Frobenius norm, normalizer
};

// Runs the model (frozen) over `data`, perturbs each batch independently with
// the attack, and aggregates per-component divergences. Throws when the model
// exposes no probes. Deterministic given (model parameters, attack, seed).
DivergenceReport measure_components(const model::Model& m, const adv::Dataset& data,
                                    const adv::AttackConfig& attack, const std::string& split,
                                    std::uint64_t seed, std::int64_t batch_size = 128);

// Structured text rows plus a companion plot-data block (one row per bar:
// component metric split change_rate).
std::string format_report(const DivergenceReport& r);
std::string format_plot_data(const DivergenceReport& r);

}  // namespace ssmlab::diag
