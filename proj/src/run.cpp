#include "ssmlab/exp/run.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssmlab/checkpoint.hpp"
#include "ssmlab/diag/divergence.hpp"
#include "ssmlab/theory/bounds.hpp"

namespace ssmlab::exp {

namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

adv::Dataset take_subset(const adv::Dataset& d, std::int64_t count) {
  if (count >= d.size()) return d;
  const std::int64_t L = d.inputs.shape()[1], c = d.inputs.shape()[2];
  std::vector<double> buf(d.inputs.data().begin(), d.inputs.data().begin() + count * L * c);
  adv::Dataset out;
  out.inputs = ad::Tensor::from({count, L, c}, std::move(buf));
  out.labels.assign(d.labels.begin(), d.labels.begin() + count);
  return out;
}

adv::Dataset images_to_dataset(const data::Images& imgs, std::vector<std::int64_t> labels,
                               const DataConfig& dc) {
  data::Images pooled = data::avg_pool(imgs, dc.pool);
  adv::Dataset out;
  out.inputs = data::to_sequence(pooled, dc.seq_len, dc.channels);
  out.labels = std::move(labels);
  return out;
}

// Fixed seeded subsample used for per-epoch train-set robust accuracy.
adv::Dataset fixed_subsample(const adv::Dataset& d, std::int64_t count, std::uint64_t seed) {
  if (count >= d.size()) return d;
  std::vector<std::int64_t> idx(static_cast<std::size_t>(d.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i);
  Rng rng = Rng::derive(seed, 31337);
  for (std::int64_t i = d.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::int64_t>(rng.uniform_u64(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  const std::int64_t L = d.inputs.shape()[1], c = d.inputs.shape()[2];
  std::vector<double> buf(static_cast<std::size_t>(count * L * c));
  adv::Dataset out;
  out.labels.resize(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    const std::int64_t row = idx[static_cast<std::size_t>(i)];
    std::copy(d.inputs.data().begin() + row * L * c, d.inputs.data().begin() + (row + 1) * L * c,
              buf.begin() + i * L * c);
    out.labels[static_cast<std::size_t>(i)] = d.labels[static_cast<std::size_t>(row)];
  }
  out.inputs = ad::Tensor::from({count, L, c}, std::move(buf));
  return out;
}

}  // namespace

std::pair<adv::Dataset, adv::Dataset> load_datasets(const ExperimentConfig& cfg) {
  switch (cfg.dataset.kind) {
    case DatasetKind::idx: {
      data::Images tri = data::load_idx_images(cfg.dataset.train_images);
      auto trl = data::load_idx_labels(cfg.dataset.train_labels);
      if (static_cast<std::int64_t>(trl.size()) != tri.count)
        throw std::runtime_error("idx: train image/label count mismatch");
      data::Images tei = data::load_idx_images(cfg.dataset.test_images);
      auto tel = data::load_idx_labels(cfg.dataset.test_labels);
      if (static_cast<std::int64_t>(tel.size()) != tei.count)
        throw std::runtime_error("idx: test image/label count mismatch");
      return {take_subset(images_to_dataset(tri, std::move(trl), cfg.dataset),
                          cfg.dataset.train_count),
              take_subset(images_to_dataset(tei, std::move(tel), cfg.dataset),
                          cfg.dataset.test_count)};
    }
    case DatasetKind::synthetic: {
      data::SyntheticSpec tr = cfg.dataset.synthetic;
      tr.count = cfg.dataset.train_count;
      data::SyntheticSpec te = cfg.dataset.synthetic;
      te.count = cfg.dataset.test_count;
      return {data::synthetic_dataset(tr, cfg.seed * 2 + 1),
              data::synthetic_dataset(te, cfg.seed * 2 + 2)};
    }
    case DatasetKind::digits: {
      std::vector<std::int64_t> trl, tel;
      data::Images tri = data::render_digits(cfg.dataset.train_count, trl, 0xD161D5 /*digits*/);
      data::Images tei = data::render_digits(cfg.dataset.test_count, tel, 0xD161D5 + 1);
      return {images_to_dataset(tri, std::move(trl), cfg.dataset),
              images_to_dataset(tei, std::move(tel), cfg.dataset)};
    }
  }
  throw std::logic_error("unreachable");
}

std::string manifest_text(const RunManifest& m) {
  std::string s;
  s += "config_hash = " + m.config_hash + "\n";
  s += "code_version = " + m.code_version + "\n";
  s += "started_at = " + m.started_at + "\n";
  s += "finished_at = " + m.finished_at + "\n";
  s += "status = " + m.status + "\n";
  if (!m.error.empty()) s += "error = " + m.error + "\n";
  for (const auto& a : m.artifacts) s += "artifact = " + a + "\n";
  return s;
}

RunManifest parse_manifest(const std::string& text) {
  RunManifest m;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 3);
    if (key == "config_hash") m.config_hash = val;
    else if (key == "code_version") m.code_version = val;
    else if (key == "started_at") m.started_at = val;
    else if (key == "finished_at") m.finished_at = val;
    else if (key == "status") m.status = val;
    else if (key == "error") m.error = val;
    else if (key == "artifact") m.artifacts.push_back(val);
  }
  return m;
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  RunResult result;
  RunManifest& manifest = result.manifest;
  manifest.config_hash = config_hash_hex(cfg.raw);
  manifest.code_version = kCodeVersion;
  manifest.started_at = utc_now();
  manifest.status = "ok";

  fs::create_directories(cfg.out_dir);
  auto emit = [&](const std::string& name, const std::string& content) {
    std::ofstream os(fs::path(cfg.out_dir) / name, std::ios::trunc);
    os << content;
    if (!os) throw std::runtime_error("run: failed writing " + name);
    manifest.artifacts.push_back(name);
  };
  auto finish = [&](const char* status, const std::string& err) {
    manifest.status = status;
    manifest.error = err;
    manifest.finished_at = utc_now();
    std::ofstream os(fs::path(cfg.out_dir) / "manifest.txt", std::ios::trunc);
    os << manifest_text(manifest);
  };

  try {
    auto [train_set, test_set] = load_datasets(cfg);
    adv::Dataset train_ra_set = fixed_subsample(train_set, cfg.train_ra_subset, cfg.seed);

    auto m = model::build_model(cfg.model, cfg.seed);
    opt::AdamW optim(m.parameter_tensors(), cfg.train.optimizer);

    const bool attacked_eval = cfg.eval_attack.epsilon > 0.0;
    double best_ra = -1.0;
    const std::string best_path = (fs::path(cfg.out_dir) / "best.ckpt").string();
    const std::string last_path = (fs::path(cfg.out_dir) / "last.ckpt").string();

    for (std::int64_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
      const auto t0 = std::chrono::steady_clock::now();
      const double lr_scale =
          cfg.train.cosine_schedule ? opt::cosine_lr_scale(epoch, cfg.train.epochs) : 1.0;
      auto metrics = adv::train_epoch(m, optim, train_set, cfg.train, epoch, lr_scale);

      adv::EpochRecord rec;
      rec.epoch = epoch;
      rec.train_loss = metrics.train_loss;
      rec.train_acc = metrics.train_acc;
      rec.test_ca = adv::evaluate(m, test_set, std::nullopt, 0, cfg.eval_batch);
      rec.test_ra = attacked_eval
                        ? adv::evaluate(m, test_set, cfg.eval_attack,
                                        cfg.seed * 131 + static_cast<std::uint64_t>(epoch),
                                        cfg.eval_batch)
                        : rec.test_ca;
      rec.train_ra = attacked_eval
                         ? adv::evaluate(m, train_ra_set, cfg.eval_attack,
                                         cfg.seed * 137 + static_cast<std::uint64_t>(epoch),
                                         cfg.eval_batch)
                         : metrics.train_acc;
      rec.wall_time_s =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.records.push_back(rec);

      if (cfg.save_checkpoints && rec.test_ra > best_ra) {
        best_ra = rec.test_ra;
        ckpt::save(best_path, m.parameters());
      }
      std::printf("epoch %3lld  loss %.4f  acc %.4f  CA %.4f  RA %.4f  trainRA %.4f  (%.1fs)\n",
                  static_cast<long long>(epoch), rec.train_loss, rec.train_acc, rec.test_ca,
                  rec.test_ra, rec.train_ra, rec.wall_time_s);
      std::fflush(stdout);
    }

    if (cfg.save_checkpoints) {
      ckpt::save(last_path, m.parameters());
      manifest.artifacts.push_back("best.ckpt");
      manifest.artifacts.push_back("last.ckpt");
    }

    emit("metrics.csv", adv::metrics_csv(result.records, cfg.seed));
    result.ra = adv::select_best_last(result.records, adv::metric_test_ra);
    result.ca = adv::select_best_last(result.records, adv::metric_test_ca);
    {
      char buf[512];
      std::snprintf(buf, sizeof(buf),
                    "ra_best = %.17g\nra_last = %.17g\nra_diff = %.17g\nra_best_epoch = %lld\n"
                    "ca_best = %.17g\nca_last = %.17g\nca_diff = %.17g\n",
                    result.ra.best, result.ra.last, result.ra.diff,
                    static_cast<long long>(result.ra.best_epoch), result.ca.best, result.ca.last,
                    result.ca.diff);
      emit("summary.txt", buf);
    }

    if (cfg.diagnostics) {
      // measured on the best checkpoint, the one Table-1-style rows report
      if (cfg.save_checkpoints) ckpt::assign(ckpt::load(best_path), m.parameters());
      auto rep_train =
          diag::measure_components(m, train_ra_set, cfg.eval_attack, "train", cfg.seed * 211);
      auto rep_test =
          diag::measure_components(m, test_set, cfg.eval_attack, "test", cfg.seed * 223);
      emit("divergence_train.txt", diag::format_report(rep_train));
      emit("divergence_test.txt", diag::format_report(rep_test));
      emit("divergence_plot_data.txt",
           diag::format_plot_data(rep_train) + diag::format_plot_data(rep_test));
    }

    if (cfg.bounds) {
      int passes = 0, total = 0;
      std::string report = bounds_sweep(cfg, &passes, &total);
      emit("bounds.txt", report);
    }

    finish("ok", "");
  } catch (const std::exception& e) {
    finish("failed", e.what());
    throw;
  }
  return result;
}

std::string bounds_sweep(const ExperimentConfig& cfg, int* passes, int* total) {
  std::string out;
  int pass = 0, tot = 0;
  Rng rng = Rng::derive(cfg.seed, 0xB0);
  for (std::int64_t sys = 0; sys < cfg.bounds_systems; ++sys) {
    ssm::DiscretizedSSM d;
    d.tag = ssm::ParamTag::diagonal;
    const std::size_t h = 1 + rng.uniform_u64(static_cast<std::uint64_t>(cfg.bounds_hmax));
    for (std::size_t s = 0; s < h; ++s) {
      const double mag = rng.uniform(0.05, 0.99);
      const double ph = rng.uniform(0.0, 6.283185307179586);
      d.abar.emplace_back(mag * std::cos(ph), mag * std::sin(ph));
      d.bbar.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
      d.cbar.emplace_back(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    }
    const std::int64_t L =
        cfg.bounds_L[static_cast<std::size_t>(sys) % cfg.bounds_L.size()];
    const double mu = rng.uniform(-0.3, 0.3);
    const double M = mu * mu + rng.uniform(0.01, 0.2);
    const theory::NoiseKind kind = sys % 3 == 0   ? theory::NoiseKind::constant
                                   : sys % 3 == 1 ? theory::NoiseKind::uniform
                                                  : theory::NoiseKind::gaussian_truncated;
    theory::NoiseModel noise(mu, M, kind);
    auto rep = theory::theorem1_bounds(d, noise, L);
    theory::attach_mc(rep, d, noise, cfg.bounds_samples,
                      cfg.seed * 1000 + static_cast<std::uint64_t>(sys));
    const bool ok = *rep.mc_estimate >= rep.lower - 3.0 * *rep.mc_stderr - 1e-12 &&
                    *rep.mc_estimate <= rep.upper + 3.0 * *rep.mc_stderr + 1e-12;
    ++tot;
    if (ok) ++pass;
    out += "# system " + std::to_string(sys) + " noise=" + theory::to_string(kind) +
           " sandwich=" + (ok ? "pass" : "FAIL") + "\n";
    out += theory::format_report(rep) + "\n";
  }
  out += "# sandwich " + std::to_string(pass) + "/" + std::to_string(tot) + "\n";
  if (passes) *passes = pass;
  if (total) *total = tot;
  return out;
}

ReportSummary summarize_csv(const std::string& csv_text) {
  ReportSummary sum;
  std::istringstream is(csv_text);
  std::string line;
  std::getline(is, line);  // header
  std::vector<adv::EpochRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cols;
    std::istringstream ls(line);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() < 7) continue;
    const auto epoch = std::stoll(cols[0]);
    if (records.empty() || records.back().epoch != epoch) {
      adv::EpochRecord r;
      r.epoch = epoch;
      records.push_back(r);
    }
    auto& r = records.back();
    const double acc = std::stod(cols[4]);
    if (cols[1] == "train" && cols[2] == "none") {
      r.train_acc = acc;
      if (!cols[3].empty()) r.train_loss = std::stod(cols[3]);
    } else if (cols[1] == "test" && cols[2] == "none") {
      r.test_ca = acc;
    } else if (cols[1] == "train" && cols[2] == "pgd") {
      r.train_ra = acc;
    } else if (cols[1] == "test" && cols[2] == "pgd") {
      r.test_ra = acc;
    }
  }
  if (records.empty()) throw std::runtime_error("summarize_csv: no records");
  sum.ra = adv::select_best_last(records, adv::metric_test_ra);
  sum.ca = adv::select_best_last(records, adv::metric_test_ca);
  sum.epochs = static_cast<std::int64_t>(records.size());
  return sum;
}

}  // namespace ssmlab::exp
