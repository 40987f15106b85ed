#pragma once

// Run configuration as flat "section.key = value" text.
//
// Lines are `key = value`; '#' starts a comment. Numbers use C++ stream
// syntax, booleans true/false, matrices and vectors whitespace-separated
// lists (a 4-list for noise_G is taken as its diagonal). An optional
// `preset = name` line is applied before every other key regardless of
// position. Unknown keys are errors.

#include "crawlrl/agent.hpp"
#include "crawlrl/crawler.hpp"
#include "crawlrl/world_model.hpp"

#include <filesystem>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace crawlrl {

struct TrainConfig {
  int64_t iterations = 200;
  int64_t gradient_steps = 50;   // per iteration
  int64_t collect_windows = 100;  // per iteration
  int64_t action_window = 5;      // environment steps per gait action
  int64_t horizon = 15;
  int64_t batch = 32;
  int64_t sequence_length = 64;
  int64_t imagine_starts = 256;  // posterior states drawn per update as rollout starts
  int64_t warmup_episodes = 5;
  int64_t replay_capacity = 1000000;
  uint64_t seed = 0;
  int64_t eval_every = 0;  // iterations; 0 disables periodic evaluation
  int64_t eval_episodes = 1;
  int64_t checkpoint_every = 50;  // iterations; 0 keeps only the final checkpoint

  void validate() const;
};

struct RunConfig {
  EnvConfig env;
  WorldModelConfig model;
  AgentConfig agent;
  TrainConfig train;

  void validate() const;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigFileMissing : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

struct ConfigField {
  std::string key;
  std::string doc;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

/// Every recognized key bound to cfg, in documentation order.
std::vector<ConfigField> config_fields(RunConfig& cfg);

std::vector<std::string> preset_names();
/// Resets cfg to defaults, then applies the named preset.
void apply_preset(RunConfig& cfg, const std::string& name);

/// Applies one "key=value" assignment; throws ConfigError.
void apply_override(RunConfig& cfg, const std::string& assignment);
void apply_text(RunConfig& cfg, const std::string& text, const std::string& origin = "<text>");
/// Throws ConfigFileMissing when the file cannot be opened.
void apply_file(RunConfig& cfg, const std::filesystem::path& path);
RunConfig load_config(const std::filesystem::path& path);

/// Full key = value listing; round-trips exactly through apply_text.
std::string dump_config(const RunConfig& cfg);
/// Listing with one comment line per key.
std::string config_reference();

}  // namespace crawlrl
