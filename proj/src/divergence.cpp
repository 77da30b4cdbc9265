#include "ssmlab/diag/divergence.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <stdexcept>

namespace ssmlab::diag {

std::vector<double> seq_softmax(const double* f, std::size_t L, std::size_t d) {
  std::vector<double> out(L * d);
  for (std::size_t j = 0; j < d; ++j) {
    double mx = f[j];
    for (std::size_t k = 1; k < L; ++k) mx = std::max(mx, f[k * d + j]);
    double sum = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      const double e = std::exp(f[k * d + j] - mx);
      out[k * d + j] = e;
      sum += e;
    }
    const double inv = 1.0 / sum;
    for (std::size_t k = 0; k < L; ++k) out[k * d + j] *= inv;
  }
  return out;
}

double mse_seq(const double* f, const double* fp, std::size_t L, std::size_t d) {
  double acc = 0.0;
  for (std::size_t i = 0; i < L * d; ++i) {
    const double diff = fp[i] - f[i];
    acc += diff * diff;
  }
  return acc / static_cast<double>(L);
}

double kl_seq(const double* f, const double* fp, std::size_t L, std::size_t d) {
  constexpr double kFloor = 1e-12;
  auto p = seq_softmax(f, L, d);
  auto q = seq_softmax(fp, L, d);
  double acc = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    double kl = 0.0;
    for (std::size_t k = 0; k < L; ++k) {
      const double pv = std::max(p[k * d + j], kFloor);
      const double qv = std::max(q[k * d + j], kFloor);
      kl += pv * (std::log(pv) - std::log(qv));
    }
    acc += kl;
  }
  return acc / static_cast<double>(d);
}

namespace {

struct Acc {
  double mse_before = 0.0, mse_after = 0.0;
  double kl_before = 0.0, kl_after = 0.0;
  double clean_in_norm = 0.0;
  std::int64_t samples = 0;
  std::set<std::int64_t> layers;
};

// Per-sample metric accumulation over a [B,L,*] probe pair.
void accumulate(Acc& acc, const ad::Tensor& clean_in, const ad::Tensor& adv_in,
                const ad::Tensor& clean_out, const ad::Tensor& adv_out) {
  const auto Bi = static_cast<std::size_t>(clean_in.shape()[0]);
  const auto Li = static_cast<std::size_t>(clean_in.shape()[1]);
  const auto di = static_cast<std::size_t>(clean_in.shape()[2]);
  const auto Lo = static_cast<std::size_t>(clean_out.shape()[1]);
  const auto dn = static_cast<std::size_t>(clean_out.shape()[2]);
  for (std::size_t b = 0; b < Bi; ++b) {
    const double* ci = clean_in.data().data() + b * Li * di;
    const double* ai = adv_in.data().data() + b * Li * di;
    const double* co = clean_out.data().data() + b * Lo * dn;
    const double* ao = adv_out.data().data() + b * Lo * dn;
    acc.mse_before += mse_seq(ci, ai, Li, di);
    acc.mse_after += mse_seq(co, ao, Lo, dn);
    acc.kl_before += kl_seq(ci, ai, Li, di);
    acc.kl_after += kl_seq(co, ao, Lo, dn);
    double nrm = 0.0;
    for (std::size_t i = 0; i < Li * di; ++i) nrm += ci[i] * ci[i];
    acc.clean_in_norm += std::sqrt(nrm);
    ++acc.samples;
  }
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

DivergenceReport measure_components(const model::Model& m, const adv::Dataset& data,
                                    const adv::AttackConfig& attack, const std::string& split,
                                    std::uint64_t seed, std::int64_t batch_size) {
  const std::int64_t n = data.size();
  std::map<std::string, Acc> accs;
  double norm_sum = 0.0;
  std::int64_t norm_count = 0;
  std::int64_t batch_id = 0;
  for (std::int64_t lo = 0; lo < n; lo += batch_size, ++batch_id) {
    const std::int64_t hi = std::min(n, lo + batch_size);
    const std::int64_t b = hi - lo;
    const std::int64_t L = data.inputs.shape()[1];
    const std::int64_t c = data.inputs.shape()[2];
    std::vector<double> buf(static_cast<std::size_t>(b * L * c));
    std::copy(data.inputs.data().begin() + lo * L * c, data.inputs.data().begin() + hi * L * c,
              buf.begin());
    ad::Tensor x = ad::Tensor::from({b, L, c}, std::move(buf));
    std::vector<std::int64_t> labels(data.labels.begin() + lo, data.labels.begin() + hi);

    ad::Tensor x_adv;
    if (attack.epsilon > 0.0) {
      Rng rng = Rng::derive(seed, 70000 + static_cast<std::uint64_t>(batch_id));
      x_adv = adv::pgd_attack(m, x, labels, attack, &rng);
    } else {
      x_adv = x.detach();
    }

    std::vector<model::ProbeRecord> clean_probes, adv_probes;
    (void)m.forward(x, &clean_probes);
    (void)m.forward(x_adv, &adv_probes);
    if (clean_probes.empty())
      throw std::runtime_error("measure_components: model exposes no probes");
    if (clean_probes.size() != adv_probes.size())
      throw std::runtime_error("measure_components: probe count mismatch");
    for (std::size_t i = 0; i < clean_probes.size(); ++i) {
      const auto& cp = clean_probes[i];
      const auto& ap = adv_probes[i];
      if (cp.component != ap.component)
        throw std::runtime_error("measure_components: probe order mismatch at '" + cp.component +
                                 "'");
      Acc& acc = accs[cp.component];
      accumulate(acc, cp.in, ap.in, cp.out, ap.out);
      acc.layers.insert(cp.layer);
    }
    // dataset-mean clean-feature norm from the first component's inputs
    for (const auto& p : clean_probes) {
      if (p.component != "ssm") continue;
      const auto Bi = static_cast<std::size_t>(p.in.shape()[0]);
      const auto sz = static_cast<std::size_t>(p.in.shape()[1] * p.in.shape()[2]);
      for (std::size_t bi = 0; bi < Bi; ++bi) {
        double nrm = 0.0;
        const double* f = p.in.data().data() + bi * sz;
        for (std::size_t i = 0; i < sz; ++i) nrm += f[i] * f[i];
        norm_sum += std::sqrt(nrm);
        ++norm_count;
      }
    }
  }

  DivergenceReport rep;
  rep.clean_feature_norm = norm_count > 0 ? norm_sum / static_cast<double>(norm_count) : 0.0;
  const double nz = rep.clean_feature_norm > 0.0 ? rep.clean_feature_norm : 1.0;
  for (auto& [component, acc] : accs) {
    const double inv = acc.samples > 0 ? 1.0 / static_cast<double>(acc.samples) : 0.0;
    for (const char* metric : {"kl", "mse"}) {
      DivergenceRow row;
      row.component = component;
      row.layers_averaged = static_cast<std::int64_t>(acc.layers.size());
      row.split = split;
      row.metric = metric;
      const bool is_kl = metric[0] == 'k';
      row.before = (is_kl ? acc.kl_before : acc.mse_before) * inv;
      row.after = (is_kl ? acc.kl_after : acc.mse_after) * inv;
      row.change = row.after - row.before;
      if (row.before != 0.0) row.change_rate = row.change / row.before;
      row.before_rel = row.before / nz;
      row.after_rel = row.after / nz;
      rep.rows.push_back(std::move(row));
    }
  }
  return rep;
}

std::string format_report(const DivergenceReport& r) {
  std::string s =
      "component layers_averaged split metric before after change change_rate before_rel "
      "after_rel\n";
  for (const auto& row : r.rows) {
    s += row.component + " " + std::to_string(row.layers_averaged) + " " + row.split + " " +
         row.metric + " " + fmt17(row.before) + " " + fmt17(row.after) + " " + fmt17(row.change) +
         " " + (row.change_rate ? fmt17(*row.change_rate) : std::string("null")) + " " +
         fmt17(row.before_rel) + " " + fmt17(row.after_rel) + "\n";
  }
  s += "clean_feature_norm = " + fmt17(r.clean_feature_norm) + "\n";
  return s;
}

std::string format_plot_data(const DivergenceReport& r) {
  std::string s = "component metric split change_rate\n";
  for (const auto& row : r.rows)
    s += row.component + " " + row.metric + " " + row.split + " " +
         (row.change_rate ? fmt17(*row.change_rate) : std::string("null")) + "\n";
  return s;
}

}  // namespace ssmlab::diag
