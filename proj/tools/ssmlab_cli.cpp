// ssmlab command-line front end.
//
//   train        run a full experiment from a config file
//   attack-eval  evaluate clean/robust accuracy of a checkpoint
//   diagnose     per-component clean/adversarial divergence report
//   bounds       output-error bound sweep with Monte Carlo verification
//   report       recompute best/last/diff from a run's metrics.csv
//   make-data    write rendered-digit IDX files (offline MNIST-geometry data)
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ssmlab/checkpoint.hpp"
#include "ssmlab/data/data.hpp"
#include "ssmlab/diag/divergence.hpp"
#include "ssmlab/exp/run.hpp"
#include "ssmlab/kernels.hpp"

namespace fs = std::filesystem;
using namespace ssmlab;

namespace {

exp::ExperimentConfig load_config(const std::string& path) {
  return exp::parse_experiment(exp::Ini::parse_file(path));
}

void write_file(const fs::path& p, const std::string& content) {
  fs::create_directories(p.parent_path().empty() ? "." : p.parent_path());
  std::ofstream os(p, std::ios::trunc);
  os << content;
  if (!os) throw std::runtime_error("cannot write " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream is(p);
  if (!is) throw std::runtime_error("cannot read " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

int cmd_train(const std::string& config_path) {
  auto cfg = load_config(config_path);
  std::printf("ssmlab train: %s -> %s (kernels: %s)\n", config_path.c_str(),
              cfg.out_dir.c_str(), kernels::backend_name().c_str());
  auto result = exp::run_experiment(cfg);
  std::printf("done. RA best/last/diff = %.4f/%.4f/%.4f (best at epoch %lld); "
              "CA best/last/diff = %.4f/%.4f/%.4f\n",
              result.ra.best, result.ra.last, result.ra.diff,
              static_cast<long long>(result.ra.best_epoch), result.ca.best, result.ca.last,
              result.ca.diff);
  return 0;
}

int cmd_attack_eval(const std::string& config_path, const std::string& checkpoint) {
  auto cfg = load_config(config_path);
  auto [train_set, test_set] = exp::load_datasets(cfg);
  auto m = model::build_model(cfg.model, cfg.seed);
  ckpt::assign(ckpt::load(checkpoint), m.parameters());
  const double ca = adv::evaluate(m, test_set, std::nullopt, 0, cfg.eval_batch);
  const double ra = adv::evaluate(m, test_set, cfg.eval_attack, cfg.seed * 977, cfg.eval_batch);
  char buf[256];
  std::snprintf(buf, sizeof(buf), "checkpoint = %s\nca = %.17g\nra = %.17g\n", checkpoint.c_str(),
                ca, ra);
  write_file(fs::path(cfg.out_dir) / "attack_eval.txt", buf);
  std::printf("%s", buf);
  return 0;
}

int cmd_diagnose(const std::string& config_path, const std::string& checkpoint) {
  auto cfg = load_config(config_path);
  auto [train_set, test_set] = exp::load_datasets(cfg);
  auto m = model::build_model(cfg.model, cfg.seed);
  ckpt::assign(ckpt::load(checkpoint), m.parameters());
  auto rep_train = diag::measure_components(m, train_set, cfg.eval_attack, "train",
                                            cfg.seed * 211);
  auto rep_test = diag::measure_components(m, test_set, cfg.eval_attack, "test", cfg.seed * 223);
  write_file(fs::path(cfg.out_dir) / "divergence_train.txt", diag::format_report(rep_train));
  write_file(fs::path(cfg.out_dir) / "divergence_test.txt", diag::format_report(rep_test));
  write_file(fs::path(cfg.out_dir) / "divergence_plot_data.txt",
             diag::format_plot_data(rep_train) + diag::format_plot_data(rep_test));
  std::printf("%s", diag::format_report(rep_test).c_str());
  return 0;
}

int cmd_bounds(const std::string& config_path) {
  auto cfg = load_config(config_path);
  int passes = 0, total = 0;
  auto report = exp::bounds_sweep(cfg, &passes, &total);
  write_file(fs::path(cfg.out_dir) / "bounds.txt", report);
  std::printf("sandwich %d/%d (report: %s/bounds.txt)\n", passes, total, cfg.out_dir.c_str());
  return passes == total ? 0 : 2;
}

int cmd_report(const std::string& config_path) {
  auto cfg = load_config(config_path);
  auto sum = exp::summarize_csv(read_file(fs::path(cfg.out_dir) / "metrics.csv"));
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "epochs = %lld\n"
                "ra_best = %.17g\nra_last = %.17g\nra_diff = %.17g\nra_best_epoch = %lld\n"
                "ca_best = %.17g\nca_last = %.17g\nca_diff = %.17g\n",
                static_cast<long long>(sum.epochs), sum.ra.best, sum.ra.last, sum.ra.diff,
                static_cast<long long>(sum.ra.best_epoch), sum.ca.best, sum.ca.last, sum.ca.diff);
  write_file(fs::path(cfg.out_dir) / "report.txt", buf);
  std::printf("%s", buf);
  return 0;
}

int cmd_make_data(const std::string& out_dir, std::int64_t train_n, std::int64_t test_n,
                  std::uint64_t seed) {
  fs::create_directories(out_dir);
  std::vector<std::int64_t> labels;
  auto tr = data::render_digits(train_n, labels, seed);
  data::save_idx_images((fs::path(out_dir) / "train-images-idx3-ubyte").string(), tr);
  data::save_idx_labels((fs::path(out_dir) / "train-labels-idx1-ubyte").string(), labels);
  auto te = data::render_digits(test_n, labels, seed + 1);
  data::save_idx_images((fs::path(out_dir) / "t10k-images-idx3-ubyte").string(), te);
  data::save_idx_labels((fs::path(out_dir) / "t10k-labels-idx1-ubyte").string(), labels);
  std::printf("wrote %lld train / %lld test digit images under %s\n",
              static_cast<long long>(train_n), static_cast<long long>(test_n), out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssmlab: state-space sequence models under adversarial training"};
  app.require_subcommand(1);

  std::string config_path, checkpoint, out_dir = "data/digits";
  std::int64_t train_n = 2000, test_n = 1000;
  std::uint64_t seed = 1;

  auto* train = app.add_subcommand("train", "run an experiment");
  train->add_option("config", config_path, "config file")->required();

  auto* attack_eval = app.add_subcommand("attack-eval", "evaluate a checkpoint");
  attack_eval->add_option("config", config_path, "config file")->required();
  attack_eval->add_option("--checkpoint", checkpoint, "checkpoint path")->required();

  auto* diagnose = app.add_subcommand("diagnose", "component divergence report");
  diagnose->add_option("config", config_path, "config file")->required();
  diagnose->add_option("--checkpoint", checkpoint, "checkpoint path")->required();

  auto* bounds = app.add_subcommand("bounds", "bound sweep with MC verification");
  bounds->add_option("config", config_path, "config file")->required();

  auto* report = app.add_subcommand("report", "recompute best/last/diff from metrics.csv");
  report->add_option("config", config_path, "config file")->required();

  auto* make_data = app.add_subcommand("make-data", "write rendered-digit IDX files");
  make_data->add_option("--out", out_dir, "output directory");
  make_data->add_option("--train", train_n, "train image count");
  make_data->add_option("--test", test_n, "test image count");
  make_data->add_option("--seed", seed, "render seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (attack_eval->parsed()) return cmd_attack_eval(config_path, checkpoint);
    if (diagnose->parsed()) return cmd_diagnose(config_path, checkpoint);
    if (bounds->parsed()) return cmd_bounds(config_path);
    if (report->parsed()) return cmd_report(config_path);
    if (make_data->parsed()) return cmd_make_data(out_dir, train_n, test_n, seed);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime failure: %s\n", e.what());
    return 2;
  }
  return 0;
}
