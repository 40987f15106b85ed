#pragma once

// Collect / fit model / train agent loop with metrics, evaluation and
// checkpoints.
//
// Run directory layout:
//   config.cfg        full configuration echo
//   metrics.csv       one row per iteration, numeric outputs only
//   episodes.csv      one row per finished training episode
//   timing.csv        wall-clock seconds per iteration
//   checkpoints/      iter_<n>.ckpt and final.ckpt

#include "crawlrl/agent.hpp"
#include "crawlrl/config.hpp"
#include "crawlrl/replay.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <vector>

namespace crawlrl {

/// Independent stream seeds derived from one master seed.
uint64_t derive_seed(uint64_t master, uint64_t stream);

struct EpisodeSummary {
  int64_t iteration = 0;  // 0 during warmup
  int64_t episode = 0;
  double total_return = 0.0;
  bool success = false;
  double duration = 0.0;  // s
  int64_t windows = 0;
  double final_s1 = 0.0;
};

struct MetricsRow {
  int64_t iteration = 0;
  int64_t env_steps = 0;
  int64_t episodes = 0;
  double episode_return = 0.0;  // mean over episodes finished this iteration; NaN if none
  double success_rate = 0.0;    // same episodes; NaN if none
  double wm_loss = 0.0;
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  double kl = 0.0;
  double clamp_fraction = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double scale = 0.0;
  double imagined_return = 0.0;
  double entropy = 0.0;
};

std::string metrics_header();
std::string format_metrics(const MetricsRow& row);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);
std::vector<EpisodeSummary> read_episodes_csv(const std::filesystem::path& path);

struct EvalEpisode {
  double total_return = 0.0;
  bool success = false;
  double duration = 0.0;
  double final_s1 = 0.0;
  std::vector<TrajectoryRow> rows;  // filled only when requested
};

struct EvalResult {
  std::vector<EvalEpisode> episodes;
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<double> times_to_target;  // successful episodes only
};

/// Filtered policy execution on a fresh environment seeded with env_seed.
/// deterministic uses the policy mean and posterior means.
EvalResult evaluate_policy(const WorldModel& model, const Agent& agent, const RunConfig& cfg, int64_t episodes,
                           bool deterministic, uint64_t env_seed, bool keep_rows = false);

struct RolloutResult {
  std::vector<TrajectoryRow> rows;  // one per dt step
  bool reached_goal = false;
  double time_to_goal = 0.0;
  double displacement = 0.0;  // final s1 - initial s1
};

/// Open-loop gait for a fixed duration; episode termination is ignored.
RolloutResult rollout_gait(const EnvConfig& env, const GaitAction& gait, const ActionBounds& bounds, double duration,
                           uint64_t seed);

struct GridPoint {
  double a1 = 0.0;
  double omega = 0.0;
  RolloutResult result;
};

/// Rolls out u = A1 sin(omega t) for every pair; rows are dropped.
std::vector<GridPoint> grid_search(const EnvConfig& env, const ActionBounds& bounds, const std::vector<double>& a1s,
                                   const std::vector<double>& omegas, double duration, uint64_t seed);

/// Trailing moving average over `window` entries (shorter at the start).
std::vector<double> moving_average(const std::vector<double>& values, size_t window);

/// Mean of the 20-episode moving average over episodes finished in the
/// first and in the last `fraction` of iterations.
struct LearningProgress {
  double early = 0.0;
  double late = 0.0;
  size_t early_count = 0;
  size_t late_count = 0;
};
LearningProgress learning_progress(const std::vector<EpisodeSummary>& episodes, int64_t iterations,
                                   double fraction = 0.1, size_t window = 20);

class Trainer {
 public:
  explicit Trainer(RunConfig cfg, std::optional<std::filesystem::path> out_dir = std::nullopt);
  ~Trainer();

  const RunConfig& config() const { return cfg_; }
  WorldModel& model() { return *model_; }
  Agent& agent() { return *agent_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const std::vector<EpisodeSummary>& episodes() const { return episodes_; }
  const std::vector<MetricsRow>& metrics() const { return metrics_; }
  int64_t env_steps() const { return env_steps_; }
  int64_t iteration() const { return iteration_; }
  bool warmed_up() const { return warmed_up_; }

  /// Runs n action windows, pushing one record each (plus one per reset).
  /// random draws uniform gait actions instead of querying the actor.
  std::vector<EpisodeSummary> collect(int64_t windows, bool random);

  /// Random-gait episodes until warmup_episodes are done and one sequence is sampleable.
  void warmup();
  /// Collect, then gradient_steps model + agent updates. Requires warmup.
  MetricsRow train_iteration();
  /// Warmup, every iteration, checkpoints.
  void run(const std::function<void(const MetricsRow&)>& on_row = {});

  EvalResult evaluate(int64_t episodes, bool deterministic, uint64_t env_seed, bool keep_rows = false) const;

  void save_checkpoint(const std::filesystem::path& path) const;

 private:
  struct Collector;

  void begin_episode();
  void log_episode(const EpisodeSummary& e);

  RunConfig cfg_;
  std::optional<std::filesystem::path> out_dir_;
  std::unique_ptr<WorldModel> model_;
  std::unique_ptr<Agent> agent_;
  ReplayBuffer buffer_;
  Rng train_rng_;
  Rng policy_rng_;
  std::unique_ptr<Collector> collector_;
  std::vector<EpisodeSummary> episodes_;
  std::vector<MetricsRow> metrics_;
  int64_t env_steps_ = 0;
  int64_t iteration_ = 0;
  bool warmed_up_ = false;
  std::ofstream metrics_out_;
  std::ofstream episodes_out_;
  std::ofstream timing_out_;
};

/// Everything needed to run a trained policy.
struct LoadedPolicy {
  RunConfig cfg;
  std::unique_ptr<WorldModel> model;
  std::unique_ptr<Agent> agent;
};

void write_checkpoint(const std::filesystem::path& path, const RunConfig& cfg, const WorldModel& model,
                      const Agent& agent);
LoadedPolicy load_checkpoint(const std::filesystem::path& path);

}  // namespace crawlrl
