// crawlrl: train, evaluate and inspect crawler locomotion policies.

#include "crawlrl/config.hpp"
#include "crawlrl/plot.hpp"
#include "crawlrl/trainer.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <iostream>

namespace fs = std::filesystem;
using namespace crawlrl;

namespace {

constexpr int kExitConfigMissing = 2;

fs::path default_root() {
  const char* env = std::getenv("CRAWLRL_OUT");
  return env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
}

struct ConfigArgs {
  std::string config;
  std::string preset;
  std::vector<std::string> overrides;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "key = value configuration file");
    cmd->add_option("--preset", preset, "named preset applied before --config and --set");
    cmd->add_option("--set", overrides, "override as key=value (repeatable)");
  }

  RunConfig build() const {
    RunConfig cfg;
    if (!preset.empty()) apply_preset(cfg, preset);
    // A preset named in the file replaces --preset; plain keys layer on top.
    if (!config.empty()) apply_file(cfg, config);
    for (const auto& o : overrides) apply_override(cfg, o);
    cfg.validate();
    return cfg;
  }
};

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(std::stod(cell));
  return out;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_train(const ConfigArgs& args, std::optional<uint64_t> seed, std::string out) {
  RunConfig cfg = args.build();
  if (seed) cfg.train.seed = *seed;
  const fs::path dir = out.empty() ? default_root() / ("seed" + std::to_string(cfg.train.seed)) : fs::path(out);
  Trainer trainer(cfg, dir);
  std::cout << "run directory: " << dir.string() << '\n';
  trainer.run([&](const MetricsRow& r) {
    std::cout << "iter " << r.iteration << "/" << cfg.train.iterations << "  steps " << r.env_steps << "  episodes "
              << r.episodes << "  return " << r.episode_return << "  wm " << r.wm_loss << "  actor " << r.actor_loss
              << "  critic " << r.critic_loss << std::endl;
  });
  return 0;
}

int cmd_eval(const std::string& checkpoint, int64_t episodes, bool deterministic, uint64_t seed, std::string out) {
  const LoadedPolicy pol = load_checkpoint(checkpoint);
  const EvalResult ev = evaluate_policy(*pol.model, *pol.agent, pol.cfg, episodes, deterministic, seed, true);
  const fs::path dir = out.empty() ? fs::path(checkpoint).parent_path() / "eval" : fs::path(out);
  fs::create_directories(dir);
  std::ostringstream summary;
  summary << "episodes = " << episodes << "\nmean_return = " << ev.mean_return
          << "\nsuccess_rate = " << ev.success_rate << "\nmedian_time_to_target = " << median(ev.times_to_target)
          << "\n";
  for (size_t i = 0; i < ev.episodes.size(); ++i) {
    const EvalEpisode& e = ev.episodes[i];
    write_trajectory_csv(dir / ("episode_" + std::to_string(i) + ".csv"), e.rows);
    summary << "episode_" << i << " = return " << e.total_return << ", success " << e.success << ", duration "
            << e.duration << ", final_s1 " << e.final_s1 << "\n";
  }
  write_text(dir / "summary.txt", summary.str());
  std::cout << summary.str();
  return 0;
}

struct RolloutArgs {
  std::string gait;
  double a1 = 0.8;
  double omega = 6.0;
  double duration = 200.0;
  uint64_t seed = 0;
  std::string out;
  std::string a1_grid;
  std::string omega_grid;
};

int cmd_rollout(const ConfigArgs& cargs, const RolloutArgs& r) {
  const RunConfig cfg = cargs.build();
  const ActionBounds& bounds = cfg.agent.bounds;
  if (!r.a1_grid.empty() || !r.omega_grid.empty()) {
    const auto a1s = r.a1_grid.empty() ? std::vector<double>{r.a1} : parse_doubles(r.a1_grid);
    const auto ws = r.omega_grid.empty() ? std::vector<double>{r.omega} : parse_doubles(r.omega_grid);
    const auto grid = grid_search(cfg.env, bounds, a1s, ws, r.duration, r.seed);
    std::ostringstream os;
    os << "A1,omega,reached_goal,time_to_goal,displacement\n";
    for (const auto& p : grid) {
      os << p.a1 << ',' << p.omega << ',' << (p.result.reached_goal ? 1 : 0) << ',' << p.result.time_to_goal << ','
         << p.result.displacement << '\n';
    }
    if (!r.out.empty()) write_text(r.out, os.str());
    std::cout << os.str();
    return 0;
  }
  GaitAction g;
  if (!r.gait.empty()) {
    const auto v = parse_doubles(r.gait);
    const size_t n = static_cast<size_t>(bounds.harmonics);
    if (v.size() != 2 * n + 2) {
      throw std::invalid_argument("--gait needs " + std::to_string(2 * n + 2) + " values: A0..AN,B1..BN,omega");
    }
    g.a.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n + 1));
    g.b.assign(v.begin() + static_cast<std::ptrdiff_t>(n + 1), v.end() - 1);
    g.omega = v.back();
  } else {
    g.a.assign(static_cast<size_t>(bounds.harmonics) + 1, 0.0);
    g.b.assign(static_cast<size_t>(bounds.harmonics), 0.0);
    if (bounds.harmonics >= 1) g.a[1] = r.a1;
    g.omega = r.omega;
  }
  const RolloutResult res = rollout_gait(cfg.env, g, bounds, r.duration, r.seed);
  const fs::path out = r.out.empty() ? default_root() / "rollout.csv" : fs::path(r.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  write_trajectory_csv(out, res.rows);
  std::cout << "rows = " << res.rows.size() << "\ndisplacement = " << res.displacement
            << "\nreached_goal = " << res.reached_goal << "\ntime_to_goal = " << res.time_to_goal
            << "\ntrajectory = " << out.string() << "\n";
  return 0;
}

int cmd_plot(const std::vector<std::string>& runs, const std::string& trajectory, std::string out) {
  const fs::path dir = out.empty() ? fs::path(".") : fs::path(out);
  fs::create_directories(dir);
  if (!runs.empty()) {
    std::vector<std::vector<EpisodeSummary>> all;
    std::vector<std::string> missing;
    for (const auto& r : runs) {
      const fs::path f = fs::path(r) / "episodes.csv";
      if (!fs::exists(f)) {
        missing.push_back(f.string());
        continue;
      }
      all.push_back(read_episodes_csv(f));
    }
    if (!missing.empty()) {
      std::string msg = "missing metrics file(s):";
      for (const auto& m : missing) msg += " " + m;
      throw std::runtime_error(msg);
    }
    write_text(dir / "learning_curve.svg", render_svg({learning_curve_panel(learning_curve(all))}));
    std::cout << "wrote " << (dir / "learning_curve.svg").string() << '\n';
  }
  if (!trajectory.empty()) {
    write_text(dir / "trajectory.svg", render_svg(trajectory_panels(read_trajectory_csv(trajectory))));
    std::cout << "wrote " << (dir / "trajectory.svg").string() << '\n';
  }
  if (runs.empty() && trajectory.empty()) throw std::invalid_argument("plot: give run directories or --trajectory");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Model-based reinforcement learning for a two-mass crawler"};
  app.require_subcommand(1);

  ConfigArgs train_cfg;
  std::optional<uint64_t> train_seed;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train a policy and write a run directory");
  train_cfg.add_to(train);
  train->add_option("--seed", train_seed, "master seed (overrides train.seed)");
  train->add_option("--out", train_out, "run directory (default $CRAWLRL_OUT/seed<N>, else runs/seed<N>)");

  std::string checkpoint;
  int64_t episodes = 10;
  bool deterministic = false;
  uint64_t eval_seed = 0;
  std::string eval_out;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on fresh episodes");
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("--episodes", episodes, "episodes to run")->check(CLI::PositiveNumber);
  eval->add_flag("--deterministic", deterministic, "use policy and posterior means");
  eval->add_option("--seed", eval_seed, "environment seed");
  eval->add_option("--out", eval_out, "output directory (default <checkpoint dir>/eval)");

  ConfigArgs rollout_cfg;
  RolloutArgs rollout_args;
  auto* rollout = app.add_subcommand("rollout", "simulate an open-loop gait, or grid-search A1 x omega");
  rollout_cfg.add_to(rollout);
  rollout->add_option("--gait", rollout_args.gait, "comma-separated A0..AN,B1..BN,omega");
  rollout->add_option("--a1", rollout_args.a1, "first sine amplitude when --gait is absent");
  rollout->add_option("--omega", rollout_args.omega, "gait frequency [rad/s] when --gait is absent");
  rollout->add_option("--duration", rollout_args.duration, "simulated seconds");
  rollout->add_option("--seed", rollout_args.seed, "noise seed");
  rollout->add_option("--out", rollout_args.out, "output CSV");
  rollout->add_option("--a1-grid", rollout_args.a1_grid, "comma-separated A1 values for a grid search");
  rollout->add_option("--omega-grid", rollout_args.omega_grid, "comma-separated omega values for a grid search");

  std::vector<std::string> plot_runs;
  std::string plot_traj;
  std::string plot_out;
  auto* plot = app.add_subcommand("plot", "write SVG learning curves and trajectory panels");
  plot->add_option("runs", plot_runs, "run directories holding episodes.csv");
  plot->add_option("--trajectory", plot_traj, "trajectory CSV from eval or rollout");
  plot->add_option("--out", plot_out, "output directory");

  auto* defaults = app.add_subcommand("defaults", "print every configuration key with its default");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(train_cfg, train_seed, train_out);
    if (*eval) return cmd_eval(checkpoint, episodes, deterministic, eval_seed, eval_out);
    if (*rollout) return cmd_rollout(rollout_cfg, rollout_args);
    if (*plot) return cmd_plot(plot_runs, plot_traj, plot_out);
    if (*defaults) {
      std::cout << config_reference();
      return 0;
    }
  } catch (const ConfigFileMissing& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfigMissing;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
