#include "spider/config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "spider/errors.hpp"

namespace spider {

namespace {

const std::map<std::string, std::string>& default_settings() {
  static const std::map<std::string, std::string> defaults = {
      {"seed", "1"},
      {"tasks", "BRIGHT,DARK,TEXTURE,EDGE"},
      {"n_per_iter", "8"},        // N: samples per task per iteration
      {"batch_per_task", "2"},    // B
      {"epochs", "30"},
      {"lr", "0.0001"},
      {"decay_size", "30"},
      {"decay_rate", "0.9"},
      {"strategy", "balance_unify"},
      {"step_per", "inner"},      // inner | outer
      {"flip", "true"},
      {"strict_nan", "false"},
      {"ppa_window", "7"},
      {"prompt_g", "8"},          // G for random prompt selection
      {"cluster_k", "8"},         // K for clustered prompt selection
      {"n_train", "64"},
      {"n_test", "32"},
      {"canvas", "48"},
      {"widths", "16,32,64"},
      {"channels", "16"},
      {"blocks", "2"},
      {"heads", "4"},
      {"prompt_encoder", "shared"},  // shared | separate
      {"ablate_epochs", "8"},
      {"ablate_seeds", "3"},
      {"continual_tasks", "DARK,EDGE"},  // fine-tuned sequentially
      {"continual_epochs", "12"},
      {"continual_lr", "0.001"},
  };
  return defaults;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

uint64_t fnv1a(const std::string& s, uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RunConfig::RunConfig() : values_(default_settings()) {}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(is, line)) lines.push_back(line);
  return from_lines(lines);
}

RunConfig RunConfig::from_lines(const std::vector<std::string>& lines) {
  RunConfig cfg;
  for (const auto& raw : lines) {
    std::string line = raw;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("malformed config line '" + raw + "' (expected key = value)");
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  cfg.apply_env();
  return cfg;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (default_settings().find(key) == default_settings().end())
    throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void RunConfig::apply_env() {
  if (const char* env = std::getenv("SPIDER_SEED")) values_["seed"] = env;
}

int64_t RunConfig::get_int(const std::string& key) const {
  try {
    size_t pos = 0;
    const int64_t v = std::stoll(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not an integer: '" + get(key) + "'");
  }
}

double RunConfig::get_double(const std::string& key) const {
  try {
    size_t pos = 0;
    const double v = std::stod(get(key), &pos);
    if (pos != get(key).size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
  }
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = get(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
}

std::vector<std::string> RunConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(get(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int64_t> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int64_t> out;
  for (const auto& s : get_list(key)) {
    try {
      out.push_back(std::stoll(s));
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' has a non-integer entry '" + s + "'");
    }
  }
  return out;
}

uint64_t RunConfig::digest() const {
  // values_ is an ordered map, so iteration is already canonical
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [k, v] : values_) {
    h = fnv1a(k, h);
    h = fnv1a("=", h);
    h = fnv1a(v, h);
    h = fnv1a("\n", h);
  }
  return h;
}

std::string RunConfig::digest_hex() const {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(digest()));
  return buf;
}

ModelConfig RunConfig::model_config() const {
  ModelConfig mc;
  mc.widths = get_int_list("widths");
  mc.channels = get_int("channels");
  mc.blocks = get_int("blocks");
  mc.heads = get_int("heads");
  const std::string pe = get("prompt_encoder");
  if (pe == "shared") mc.shared_prompt_encoder = true;
  else if (pe == "separate") mc.shared_prompt_encoder = false;
  else throw ConfigError("prompt_encoder must be 'shared' or 'separate', got '" + pe + "'");
  mc.validate();
  return mc;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig tc;
  tc.tasks = get_list("tasks");
  if (tc.tasks.empty()) throw ConfigError("config key 'tasks' is empty");
  tc.samples_per_task = get_int("n_per_iter");
  tc.batch_per_task = get_int("batch_per_task");
  tc.epochs = get_int("epochs");
  tc.lr = get_double("lr");
  tc.decay_size = get_int("decay_size");
  tc.decay_rate = get_double("decay_rate");
  tc.strategy = strategy_from_name(get("strategy"));
  tc.seed = static_cast<uint64_t>(get_int("seed"));
  const std::string sp = get("step_per");
  if (sp == "inner") tc.step_per_outer = false;
  else if (sp == "outer") tc.step_per_outer = true;
  else throw ConfigError("step_per must be 'inner' or 'outer', got '" + sp + "'");
  tc.flip_augment = get_bool("flip");
  tc.strict_nan = get_bool("strict_nan");
  tc.ppa_window = get_int("ppa_window");
  tc.validate();
  return tc;
}

std::vector<TaskConfig> RunConfig::task_configs() const {
  std::vector<TaskConfig> out;
  for (const auto& name : get_list("tasks")) {
    TaskConfig tc;
    tc.task = concept_from_name(name);
    tc.gen.canvas = get_int("canvas");
    tc.n_train = get_int("n_train");
    tc.n_test = get_int("n_test");
    tc.seed = static_cast<uint64_t>(get_int("seed"));
    out.push_back(tc);
  }
  return out;
}

}  // namespace spider
