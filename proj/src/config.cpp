#include "ssmlab/exp/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssmlab::exp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

}  // namespace

Ini Ini::parse(const std::string& text) {
  Ini ini;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw std::invalid_argument("config line " + std::to_string(lineno) +
                                    ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      ini.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) +
                                  ": expected 'key = value'");
    ini.sections_[section][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return ini;
}

Ini Ini::parse_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream os;
  os << is.rdbuf();
  return parse(os.str());
}

bool Ini::has(const std::string& section, const std::string& key) const {
  auto s = sections_.find(section);
  return s != sections_.end() && s->second.count(key) > 0;
}

std::string Ini::get(const std::string& section, const std::string& key,
                     const std::string& fallback) const {
  auto s = sections_.find(section);
  if (s == sections_.end()) return fallback;
  auto k = s->second.find(key);
  return k == s->second.end() ? fallback : k->second;
}

std::string Ini::require(const std::string& section, const std::string& key) const {
  if (!has(section, key))
    throw std::invalid_argument("config: missing required [" + section + "] " + key);
  return get(section, key, "");
}

double Ini::get_double(const std::string& section, const std::string& key, double fallback) const {
  if (!has(section, key)) return fallback;
  return std::stod(get(section, key, ""));
}

std::int64_t Ini::get_int(const std::string& section, const std::string& key,
                          std::int64_t fallback) const {
  if (!has(section, key)) return fallback;
  return std::stoll(get(section, key, ""));
}

bool Ini::get_bool(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  const auto v = get(section, key, "");
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: bad boolean [" + section + "] " + key + " = " + v);
}

void Ini::set(const std::string& section, const std::string& key, const std::string& value) {
  sections_[section][key] = value;
}

std::uint64_t config_hash(const Ini& ini) {
  // std::map iteration is already key-sorted: canonical order for free.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [section, kv] : ini.sections()) {
    for (const auto& [key, value] : kv) {
      mix(section);
      mix(".");
      mix(key);
      mix("=");
      mix(value);
      mix("\n");
    }
  }
  return h;
}

std::string config_hash_hex(const Ini& ini) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(config_hash(ini)));
  return buf;
}

ExperimentConfig parse_experiment(const Ini& ini) {
  ExperimentConfig c;
  c.raw = ini;

  const std::string kind = ini.get("dataset", "kind", "digits");
  if (kind == "idx") {
    c.dataset.kind = DatasetKind::idx;
    c.dataset.train_images = ini.require("dataset", "train_images");
    c.dataset.train_labels = ini.require("dataset", "train_labels");
    c.dataset.test_images = ini.require("dataset", "test_images");
    c.dataset.test_labels = ini.require("dataset", "test_labels");
  } else if (kind == "synthetic") {
    c.dataset.kind = DatasetKind::synthetic;
    c.dataset.synthetic.count = ini.get_int("dataset", "count", 256);
    c.dataset.synthetic.seq_len = ini.get_int("dataset", "seq_len", 32);
    c.dataset.synthetic.channels = ini.get_int("dataset", "channels", 1);
    c.dataset.synthetic.classes = ini.get_int("dataset", "classes", 3);
    c.dataset.synthetic.margin = ini.get_double("dataset", "margin", 0.05);
  } else if (kind == "digits") {
    c.dataset.kind = DatasetKind::digits;
  } else {
    throw std::invalid_argument("config: unknown dataset kind '" + kind + "'");
  }
  c.dataset.train_count = ini.get_int("dataset", "train_count", 2000);
  c.dataset.test_count = ini.get_int("dataset", "test_count", 1000);
  c.dataset.pool = ini.get_int("dataset", "pool", 2);
  c.dataset.seq_len = ini.get_int("dataset", "seq_len", 196);
  c.dataset.channels = ini.get_int("dataset", "channels", 1);

  c.model.variant = model::variant_from(ini.get("model", "variant", "dss"));
  c.model.input_dim = c.dataset.kind == DatasetKind::synthetic ? c.dataset.synthetic.channels
                                                               : c.dataset.channels;
  c.model.model_dim = ini.get_int("model", "model_dim", 32);
  c.model.state_dim = ini.get_int("model", "state_dim", 16);
  c.model.n_layers = ini.get_int("model", "n_layers", 2);
  c.model.n_classes = ini.get_int("model", "n_classes", 10);
  c.model.ffn_dim = ini.get_int("model", "ffn_dim", 0);
  c.model.dt = ini.get_double("model", "dt", 0.01);
  const std::string ads = ini.get("model", "ads", "none");
  if (ads != "none") c.model.ads = ssm::activation_from(ads);
  c.model.dss_disc = ssm::disc_tag_from(ini.get("model", "dss_disc", "dss_eq7"));
  c.model.complex_modes = ini.get_bool("model", "complex_modes", true);
  c.model.validate();

  c.train.framework = adv::framework_from(ini.get("train", "framework", "st"));
  c.train.epochs = ini.get_int("train", "epochs", 20);
  c.train.batch_size = ini.get_int("train", "batch_size", 128);
  c.train.optimizer.lr = ini.get_double("train", "lr", 1e-3);
  c.train.optimizer.weight_decay = ini.get_double("train", "weight_decay", 2e-4);
  c.train.beta = ini.get_double("train", "beta", 1.0);
  c.train.trades_reverse_kl = ini.get_bool("train", "trades_reverse_kl", false);
  c.train.cosine_schedule = ini.get_bool("train", "cosine", true);
  c.train.epsilon_warmup_epochs = ini.get_int("train", "epsilon_warmup_epochs", 0);

  c.eval_attack.epsilon = ini.get_double("attack", "epsilon", 0.3);
  c.eval_attack.alpha = ini.get_double("attack", "alpha", 0.04);
  c.eval_attack.steps = static_cast<int>(ini.get_int("attack", "steps", 10));
  c.eval_attack.random_init = ini.get_bool("attack", "random_init", true);
  c.eval_attack.validate();
  c.train.train_attack = c.eval_attack;
  c.train.validate();

  c.train_ra_subset = ini.get_int("train", "train_ra_subset", 1000);
  c.eval_batch = ini.get_int("train", "eval_batch", 256);

  c.out_dir = ini.get("run", "out_dir", "runs/out");
  if (const char* env = std::getenv("SSMLAB_OUT_DIR")) c.out_dir = env;
  c.seed = static_cast<std::uint64_t>(ini.get_int("run", "seed", 1));
  c.train.seed = c.seed;
  c.diagnostics = ini.get_bool("run", "diagnostics", false);
  c.bounds = ini.get_bool("run", "bounds", false);
  c.save_checkpoints = ini.get_bool("run", "save_checkpoints", true);

  c.bounds_systems = ini.get_int("bounds", "systems", 100);
  if (ini.has("bounds", "L")) {
    c.bounds_L.clear();
    std::istringstream is(ini.get("bounds", "L", ""));
    std::int64_t v;
    while (is >> v) c.bounds_L.push_back(v);
  }
  c.bounds_hmax = ini.get_int("bounds", "h_max", 4);
  c.bounds_samples = ini.get_int("bounds", "samples", 100000);
  return c;
}

}  // namespace ssmlab::exp
