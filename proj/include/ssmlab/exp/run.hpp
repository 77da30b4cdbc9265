#pragma once
// Experiment orchestration: data staging, the train / per-epoch adversarial
// evaluation loop with best/last checkpointing (best = highest test robust
// accuracy), optional divergence diagnostics and bound sweeps, and the run
// manifest. Everything a run emits lands under one output directory and is
// listed in manifest.txt.

#include <string>
#include <vector>

#include "ssmlab/exp/config.hpp"

namespace ssmlab::exp {

struct RunManifest {
  std::string config_hash;
  std::string code_version;
  std::string started_at, finished_at;  // UTC ISO-8601
  std::string status;                   // ok | failed
  std::string error;                    // set when failed
  std::vector<std::string> artifacts;   // paths relative to out_dir
};

constexpr const char* kCodeVersion = "ssmlab 1.0.0";

// Loads the train/test splits described by the config (IDX files, synthetic
// generator, or rendered digits), applying subset/pool/reshape controls.
std::pair<adv::Dataset, adv::Dataset> load_datasets(const ExperimentConfig& cfg);

struct RunResult {
  RunManifest manifest;
  std::vector<adv::EpochRecord> records;
  adv::BestLastDiff ra, ca;
};

// Full pipeline: train -> per-epoch CA/RA eval -> best/last selection ->
// optional diagnostics and bounds -> persistence. Deterministic per seed
// (wall-clock fields excluded). Stage failures are recorded in the manifest
// (status = failed) with partial artifacts retained, then rethrown.
RunResult run_experiment(const ExperimentConfig& cfg);

// Bound sweep: random stable diagonal systems x noise models, each verified
// by Monte Carlo against the proof-form sandwich. Returns the formatted
// report; `passes`/`total` give the sandwich tally.
std::string bounds_sweep(const ExperimentConfig& cfg, int* passes, int* total);

std::string manifest_text(const RunManifest& m);
RunManifest parse_manifest(const std::string& text);

// Recompute best/last/diff triples from a metrics CSV (the `report` verb and
// the bookkeeping-fidelity check).
struct ReportSummary {
  adv::BestLastDiff ra, ca;
  std::int64_t epochs = 0;
};
ReportSummary summarize_csv(const std::string& csv_text);

}  // namespace ssmlab::exp
