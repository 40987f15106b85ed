#include "crawlrl/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace crawlrl;
namespace fs = std::filesystem;

namespace {

// Smoke preset with short episodes so collection finishes several.
RunConfig tiny_config(uint64_t seed = 0) {
  RunConfig cfg;
  apply_preset(cfg, "smoke");
  apply_override(cfg, "env.episode_length=1");
  apply_override(cfg, "train.iterations=3");
  apply_override(cfg, "train.gradient_steps=4");
  apply_override(cfg, "train.collect_windows=10");
  apply_override(cfg, "train.sequence_length=8");
  apply_override(cfg, "train.batch=4");
  apply_override(cfg, "train.horizon=5");
  cfg.train.seed = seed;
  return cfg;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("crawlrl_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

GaitAction sine_gait(double a1, double omega) {
  GaitAction g;
  g.a = {0.0, a1, 0.0};
  g.b = {0.0, 0.0};
  g.omega = omega;
  return g;
}

}  // namespace

TEST(DeriveSeed, DistinctStreamsAndMasters) {
  std::set<uint64_t> seen;
  for (uint64_t m = 0; m < 20; ++m) {
    for (uint64_t s = 0; s < 20; ++s) EXPECT_TRUE(seen.insert(derive_seed(m, s)).second);
  }
  EXPECT_EQ(derive_seed(3, 4), derive_seed(3, 4));
}

TEST(MovingAverage, TrailingWindow) {
  const auto ma = moving_average({1, 2, 3, 4, 5}, 2);
  const std::vector<double> want{1, 1.5, 2.5, 3.5, 4.5};
  for (size_t i = 0; i < want.size(); ++i) EXPECT_DOUBLE_EQ(ma[i], want[i]);
  EXPECT_THROW(moving_average({1}, 0), std::invalid_argument);
}

TEST(MovingAverage, MatchesDirectMean) {
  Rng rng(1);
  std::normal_distribution<double> n;
  std::vector<double> v(100);
  for (double& x : v) x = n(rng);
  const auto ma = moving_average(v, 20);
  for (size_t i = 0; i < v.size(); ++i) {
    const size_t lo = i >= 19 ? i - 19 : 0;
    double s = 0.0;
    for (size_t j = lo; j <= i; ++j) s += v[j];
    EXPECT_NEAR(ma[i], s / static_cast<double>(i - lo + 1), 1e-12);
  }
}

TEST(LearningProgress, SplitsByIteration) {
  std::vector<EpisodeSummary> eps;
  for (int64_t it = 0; it <= 10; ++it) {
    EpisodeSummary e;
    e.iteration = it;
    e.total_return = it == 0 ? 1000.0 : static_cast<double>(it);  // warmup is ignored
    eps.push_back(e);
  }
  const LearningProgress p = learning_progress(eps, 10, 0.1, 1);
  EXPECT_EQ(p.early_count, 1u);
  EXPECT_EQ(p.late_count, 1u);
  EXPECT_DOUBLE_EQ(p.early, 1.0);
  EXPECT_DOUBLE_EQ(p.late, 10.0);
  const LearningProgress q = learning_progress(eps, 10, 0.2, 2);
  EXPECT_DOUBLE_EQ(q.early, (1.0 + 1.5) / 2);
  EXPECT_DOUBLE_EQ(q.late, (8.5 + 9.5) / 2);
}

TEST(MetricsCsv, RoundTrip) {
  MetricsRow r;
  r.iteration = 3;
  r.env_steps = 1234;
  r.episodes = 7;
  r.episode_return = std::nan("");
  r.success_rate = std::nan("");
  r.wm_loss = 0.1;
  r.l1 = 2.0;
  r.l2 = 2.0;
  r.l3 = -3.25;
  r.kl = 1.0 / 3.0;
  r.clamp_fraction = 0.75;
  r.actor_loss = -1e-300;
  r.critic_loss = 1e300;
  r.scale = 1.0;
  r.imagined_return = 4.5;
  r.entropy = -2.0;
  const fs::path p = fresh_dir("metrics.csv");
  std::ofstream(p) << metrics_header() << '\n' << format_metrics(r) << '\n';
  const auto rows = read_metrics_csv(p);
  ASSERT_EQ(rows.size(), 1u);
  const MetricsRow& b = rows[0];
  EXPECT_EQ(b.iteration, 3);
  EXPECT_EQ(b.env_steps, 1234);
  EXPECT_TRUE(std::isnan(b.episode_return));
  EXPECT_EQ(b.kl, r.kl);
  EXPECT_EQ(b.actor_loss, r.actor_loss);
  EXPECT_EQ(b.critic_loss, r.critic_loss);
  EXPECT_EQ(format_metrics(b), format_metrics(r));
  fs::remove(p);
}

TEST(Collect, RandomCollectionPushesOneRecordPerWindowPlusResets) {
  Trainer tr(tiny_config());
  const auto eps = tr.collect(57, true);
  size_t starts = 0;
  for (const auto& ep : tr.buffer().storage()) starts += ep.front().reward == 0.0 && ep.front().t == 0.0;
  EXPECT_EQ(starts, tr.buffer().episodes());
  EXPECT_EQ(tr.buffer().steps(), 57 + tr.buffer().episodes());
  EXPECT_EQ(tr.env_steps(), 57 * tr.config().train.action_window);
  // 1 s episodes of 0.05 s windows
  EXPECT_EQ(eps.size(), 2u);
  for (const auto& e : eps) EXPECT_EQ(e.windows, 20);
}

TEST(Collect, RewardIsSumOverWindow) {
  RunConfig cfg = tiny_config();
  Trainer tr(cfg);
  tr.collect(30, true);
  double total = 0.0;
  for (const auto& r : tr.buffer().storage().front()) total += r.reward;
  EXPECT_NEAR(total, tr.episodes().front().total_return, 1e-12);
}

TEST(Rollout, ZeroGaitMakesNoProgress) {
  EnvConfig env;
  env.initial_strain = 0.0;
  const RolloutResult r = rollout_gait(env, sine_gait(0.0, 6.0), ActionBounds{}, 200.0, 3);
  ASSERT_EQ(r.rows.size(), 20000u);
  EXPECT_LT(std::abs(r.displacement), 0.01);
  env.noisy = false;
  EXPECT_EQ(rollout_gait(env, sine_gait(0.0, 6.0), ActionBounds{}, 200.0, 3).displacement, 0.0);
  // Relaxing the reset strain moves the body a few cm at most.
  EXPECT_LT(std::abs(rollout_gait(EnvConfig{}, sine_gait(0.0, 6.0), ActionBounds{}, 200.0, 3).displacement), 0.1);
}

TEST(Rollout, RowCountFollowsStep) {
  EnvConfig env;
  EXPECT_EQ(rollout_gait(env, sine_gait(0.8, 6.0), ActionBounds{}, 200.0, 0).rows.size(), 20000u);
  EXPECT_THROW(rollout_gait(env, sine_gait(0.8, 6.0), ActionBounds{}, -1.0, 0), std::invalid_argument);
}

TEST(Rollout, SeededAndReproducible) {
  EnvConfig env;
  const auto a = rollout_gait(env, sine_gait(0.8, 6.0), ActionBounds{}, 5.0, 11);
  const auto b = rollout_gait(env, sine_gait(0.8, 6.0), ActionBounds{}, 5.0, 11);
  const auto c = rollout_gait(env, sine_gait(0.8, 6.0), ActionBounds{}, 5.0, 12);
  EXPECT_EQ(a.displacement, b.displacement);
  EXPECT_NE(a.displacement, c.displacement);
}

TEST(GridSearch, FindsSuccessfulSineGait) {
  EnvConfig env;
  const auto grid = grid_search(env, ActionBounds{}, {0.2, 0.5, 0.8}, {2.0, 4.0, 6.0}, 200.0, 0);
  ASSERT_EQ(grid.size(), 9u);
  bool found = false;
  for (const auto& p : grid) {
    EXPECT_TRUE(p.result.rows.empty());
    if (p.a1 == 0.8 && p.omega == 6.0) {
      EXPECT_TRUE(p.result.reached_goal);
      EXPECT_GT(p.result.displacement, 0.5);
      EXPECT_LE(p.result.time_to_goal, 200.0);
    }
    found = found || p.result.reached_goal;
  }
  EXPECT_TRUE(found);
  // Small amplitudes stay well short of the target.
  EXPECT_FALSE(grid.front().result.reached_goal);
}

TEST(Trainer, RequiresWarmup) {
  Trainer tr(tiny_config());
  EXPECT_THROW(tr.train_iteration(), std::logic_error);
  tr.warmup();
  EXPECT_TRUE(tr.warmed_up());
  EXPECT_GE(tr.episodes().size(), 1u);
  EXPECT_TRUE(tr.buffer().can_sample(8));
}

TEST(Trainer, SmokeRunHasFiniteLosses) {
  const fs::path dir = fresh_dir("smoke");
  Trainer tr(tiny_config(), dir);
  int64_t last_steps = 0;
  tr.run([&](const MetricsRow& r) {
    EXPECT_GT(r.env_steps, last_steps);
    last_steps = r.env_steps;
  });
  ASSERT_EQ(tr.metrics().size(), 3u);
  for (const auto& r : tr.metrics()) {
    for (double v : {r.wm_loss, r.l1, r.l2, r.l3, r.kl, r.actor_loss, r.critic_loss, r.scale, r.entropy}) {
      EXPECT_TRUE(std::isfinite(v));
    }
    EXPECT_GE(r.l1, 2.0);
    EXPECT_GE(r.l2, 2.0);
    EXPECT_GE(r.clamp_fraction, 0.0);
    EXPECT_LE(r.clamp_fraction, 1.0);
  }
  for (const char* f : {"config.cfg", "metrics.csv", "episodes.csv", "timing.csv", "checkpoints/final.ckpt"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  EXPECT_EQ(read_metrics_csv(dir / "metrics.csv").size(), 3u);
  EXPECT_EQ(read_episodes_csv(dir / "episodes.csv").size(), tr.episodes().size());
  EXPECT_EQ(load_config(dir / "config.cfg").train.seed, tr.config().train.seed);
  fs::remove_all(dir);
}

TEST(Trainer, SameSeedGivesIdenticalLogsAndCheckpoints) {
  const fs::path a = fresh_dir("det_a"), b = fresh_dir("det_b"), c = fresh_dir("det_c");
  Trainer(tiny_config(5), a).run();
  Trainer(tiny_config(5), b).run();
  Trainer(tiny_config(6), c).run();
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
  EXPECT_EQ(slurp(a / "episodes.csv"), slurp(b / "episodes.csv"));
  EXPECT_EQ(slurp(a / "checkpoints/final.ckpt"), slurp(b / "checkpoints/final.ckpt"));
  EXPECT_NE(slurp(a / "metrics.csv"), slurp(c / "metrics.csv"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(Trainer, CheckpointReproducesEvaluation) {
  const fs::path dir = fresh_dir("ckpt");
  Trainer tr(tiny_config(), dir);
  tr.run();
  const EvalResult live = tr.evaluate(2, true, 99, true);
  const LoadedPolicy lp = load_checkpoint(dir / "checkpoints/final.ckpt");
  EXPECT_EQ(dump_config(lp.cfg), dump_config(tr.config()));
  const EvalResult back = evaluate_policy(*lp.model, *lp.agent, lp.cfg, 2, true, 99, true);
  EXPECT_EQ(back.mean_return, live.mean_return);
  ASSERT_EQ(back.episodes.size(), 2u);
  for (size_t e = 0; e < 2; ++e) {
    ASSERT_EQ(back.episodes[e].rows.size(), live.episodes[e].rows.size());
    EXPECT_EQ(back.episodes[e].rows.back().x1, live.episodes[e].rows.back().x1);
  }
  // Stochastic evaluation is still seeded.
  const EvalResult s1 = evaluate_policy(*lp.model, *lp.agent, lp.cfg, 1, false, 4);
  const EvalResult s2 = evaluate_policy(*lp.model, *lp.agent, lp.cfg, 1, false, 4);
  EXPECT_EQ(s1.mean_return, s2.mean_return);
  fs::remove_all(dir);
}

TEST(Trainer, CheckpointRejectsBadMagic) {
  const fs::path p = fresh_dir("bad.ckpt");
  std::ofstream(p) << "NOTACKPT and then some bytes";
  EXPECT_THROW(load_checkpoint(p), CheckpointError);
  fs::remove(p);
}

TEST(Evaluate, UntrainedPolicyDoesNotSucceed) {
  RunConfig cfg;
  apply_preset(cfg, "smoke");
  Trainer tr(cfg);
  const EvalResult r = tr.evaluate(10, true, 1);
  ASSERT_EQ(r.episodes.size(), 10u);
  EXPECT_EQ(r.success_rate, 0.0);
  EXPECT_TRUE(r.times_to_target.empty());
  for (const auto& e : r.episodes) EXPECT_NEAR(e.duration, 200.0, 1e-9);
}

TEST(Evaluate, KeepsOneRowPerStepPlusReset) {
  RunConfig cfg;
  apply_preset(cfg, "smoke");
  apply_override(cfg, "env.episode_length=2");
  apply_override(cfg, "env.goal=100");
  Trainer tr(cfg);
  const EvalResult r = tr.evaluate(2, false, 1, true);
  for (const auto& e : r.episodes) EXPECT_EQ(e.rows.size(), 201u);
}
