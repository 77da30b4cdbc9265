#pragma once
// Structured-text configuration: "key = value" lines grouped under
// [section] headers, '#' comments. No environment overrides except
// SSMLAB_OUT_DIR for the output directory.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ssmlab/adv/adversarial.hpp"
#include "ssmlab/data/data.hpp"
#include "ssmlab/model/model.hpp"

namespace ssmlab::exp {

class Ini {
 public:
  static Ini parse(const std::string& text);
  static Ini parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key,
                  const std::string& fallback) const;
  std::string require(const std::string& section, const std::string& key) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key,
                       std::int64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  void set(const std::string& section, const std::string& key, const std::string& value);

  const std::map<std::string, std::map<std::string, std::string>>& sections() const {
    return sections_;
  }

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

// FNV-1a over the canonical (sorted) "section.key=value" serialization;
// stable under key reordering in the source text.
std::uint64_t config_hash(const Ini& ini);
std::string config_hash_hex(const Ini& ini);

enum class DatasetKind { idx, synthetic, digits };

struct DataConfig {
  DatasetKind kind = DatasetKind::digits;
  // idx
  std::string train_images, train_labels, test_images, test_labels;
  // shared subset/reshape controls
  std::int64_t train_count = 2000, test_count = 1000;
  std::int64_t pool = 2;      // k x k average pool before flattening
  std::int64_t seq_len = 196;
  std::int64_t channels = 1;
  // synthetic
  data::SyntheticSpec synthetic;
};

struct ExperimentConfig {
  Ini raw;
  DataConfig dataset;
  model::ModelSpec model;
  adv::TrainConfig train;
  adv::AttackConfig eval_attack;
  std::int64_t train_ra_subset = 1000;
  std::int64_t eval_batch = 256;
  std::string out_dir = "runs/out";
  std::uint64_t seed = 1;
  bool diagnostics = false;
  bool bounds = false;
  bool save_checkpoints = true;
  // bounds sweep controls
  std::int64_t bounds_systems = 100;
  std::vector<std::int64_t> bounds_L = {8, 32};
  std::int64_t bounds_hmax = 4;
  std::int64_t bounds_samples = 100000;
};

// Throws std::invalid_argument on malformed/physically invalid configs.
ExperimentConfig parse_experiment(const Ini& ini);

}  // namespace ssmlab::exp
