#ifndef SPIDER_CONFIG_HPP
#define SPIDER_CONFIG_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spider/model.hpp"
#include "spider/synthetic.hpp"
#include "spider/train.hpp"

namespace spider {

// Key=value run settings. Unknown keys are rejected; the digest is a stable
// hash of the canonicalized effective settings (defaults merged with file and
// environment overrides), independent of key order.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::string& path);
  static RunConfig from_lines(const std::vector<std::string>& lines);

  void set(const std::string& key, const std::string& value);
  const std::string& get(const std::string& key) const;

  // applies the SPIDER_SEED environment override when present
  void apply_env();

  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<int64_t> get_int_list(const std::string& key) const;

  uint64_t digest() const;
  std::string digest_hex() const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  std::vector<TaskConfig> task_configs() const;  // aligned with tasks key

  const std::map<std::string, std::string>& items() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace spider

#endif
