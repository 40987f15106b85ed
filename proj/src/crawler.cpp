#include "crawlrl/crawler.hpp"

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/AutoDiff>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace crawlrl {

void PhysicalParams::validate() const {
  if (!(m1 > 0.0) || !(m2 > 0.0)) throw std::invalid_argument("physics: masses must be positive");
  if (!(k > 0.0)) throw std::invalid_argument("physics: stiffness must be positive");
  if (!(eps_f > 0.0)) throw std::invalid_argument("physics: eps_f must be positive");
  if (!(dt > 0.0)) throw std::invalid_argument("physics: dt must be positive");
  if (!(N_f > 1.0)) throw std::invalid_argument("physics: N_f must exceed 1");
  if (!(sigma_imu >= 0.0) || !(sigma_tof >= 0.0)) throw std::invalid_argument("physics: noise stddevs must be >= 0");
  const Eigen::Matrix4d GGt = noise_G * noise_G.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(GGt, Eigen::EigenvaluesOnly);
  if (!noise_G.allFinite() || eig.eigenvalues().minCoeff() < -1e-12) {
    throw std::invalid_argument("physics: noise_G must be finite");
  }
}

double compute_v_offset(const PhysicalParams& p) {
  if (!(p.N_f > 1.0)) throw std::domain_error("friction: sigma(0) = 0 has no root for N_f <= 1");
  return p.eps_f * std::log(2.0 / (p.N_f - 1.0));
}

Eigen::Matrix4d body_jacobian(const Eigen::Vector4d& body, double u, const PhysicalParams& p) {
  using Dual = Eigen::AutoDiffScalar<Eigen::Vector4d>;
  Vec4<Dual> x;
  for (int i = 0; i < 4; ++i) x(i) = Dual(body(i), 4, i);
  const Vec4<Dual> f = body_rhs(x, u, p);
  Eigen::Matrix4d J;
  for (int i = 0; i < 4; ++i) J.row(i) = f(i).derivatives().transpose();
  return J;
}

CrawlerState step(const CrawlerState& state, double u, Rng& rng, const PhysicalParams& p, Integrator integrator,
                  bool noisy) {
  const double dt = p.dt;
  const Eigen::Vector4d y = state.world();
  Eigen::Vector4d next;
  if (integrator == Integrator::kEuler) {
    next = y + dt * world_rate(y, u, p);
  } else {
    const Eigen::Vector4d k1 = world_rate(y, u, p);
    const Eigen::Vector4d k2 = world_rate<double>(y + 0.5 * dt * k1, u, p);
    const Eigen::Vector4d k3 = world_rate<double>(y + 0.5 * dt * k2, u, p);
    const Eigen::Vector4d k4 = world_rate<double>(y + dt * k3, u, p);
    next = y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  if (noisy) {
    Eigen::Vector4d xi;
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int i = 0; i < 4; ++i) xi(i) = normal(rng);
    // from_body is linear, so the body-coordinate increment maps directly;
    // a zero increment leaves the deterministic state bit-identical.
    next += from_body(Eigen::Vector4d(p.noise_G * xi * std::sqrt(dt)), p);
  }
  CrawlerState out = CrawlerState::from_world(next, state.t + dt);
  if (!out.finite()) throw NumericError("crawler: state became non-finite");
  return out;
}

MomentState propagate_moments(const MomentState& m, double u, const PhysicalParams& p, double dt,
                              CovarianceForm form) {
  if (!m.cov.allFinite() || !m.mean.allFinite()) throw std::invalid_argument("moments: non-finite input");
  if ((m.cov - m.cov.transpose()).cwiseAbs().maxCoeff() > 1e-10) {
    throw std::invalid_argument("moments: covariance is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix4d> eig(m.cov, Eigen::EigenvaluesOnly);
  if (eig.eigenvalues().minCoeff() < -1e-10) throw std::invalid_argument("moments: covariance is not PSD");

  const Eigen::Matrix4d J = body_jacobian(m.mean, u, p);
  const Eigen::Matrix4d A = form == CovarianceForm::kLiteral ? Eigen::Matrix4d(J.transpose()) : J;
  const Eigen::Matrix4d Phi = Eigen::Matrix4d::Identity() + dt * A;

  MomentState out;
  out.mean = m.mean + dt * body_rhs(m.mean, u, p);
  out.cov = Phi * m.cov * Phi.transpose();
  if (form == CovarianceForm::kLyapunov) out.cov += dt * p.noise_G * p.noise_G.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

Eigen::Vector2d read_imu(const CrawlerState& prev, const CrawlerState& next, const PhysicalParams& p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double a1 = (next.v1 - prev.v1) / p.dt;
  const double a2 = (next.v2 - prev.v2) / p.dt;
  const double n1 = normal(rng);
  const double n2 = normal(rng);
  return {a1 + p.imu_bias + p.sigma_imu * n1, a2 + p.imu_bias + p.sigma_imu * n2};
}

Eigen::Vector2d read_tof(const CrawlerState& state, const PhysicalParams& p, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const double n1 = normal(rng);
  const double n2 = normal(rng);
  return {std::abs(p.X_obj1 - state.x1) + p.sigma_tof * n1, std::abs(p.X_obj2 - state.x2) + p.sigma_tof * n2};
}

RewardBreakdown compute_reward(const CrawlerState& prev, const CrawlerState& cur, const ControlHistory& hist,
                               EpisodeStatus status, const PhysicalParams& p, const RewardWeights& w) {
  const Eigen::Vector4d body_prev = to_body(prev.world(), p);
  const Eigen::Vector4d body = to_body(cur.world(), p);
  RewardBreakdown r;
  r.r1 = w.k1 * (body(0) - body_prev(0)) + w.k2 * std::max(0.0, body(1));
  const double d1 = hist.u - hist.u_prev;
  const double d2 = hist.u - hist.u_prev2;
  r.r2 = -w.k3 * hist.u * hist.u - w.k4 * d1 * d1 - w.k5 * d2 * d2;
  r.r4 = body(2) < w.eps ? -w.k6 * std::abs(body(2)) : 0.0;
  switch (status) {
    case EpisodeStatus::kSuccess:
      r.r5 = w.success_bonus;
      break;
    case EpisodeStatus::kFailure:
      r.r5 = w.failure_penalty;
      break;
    case EpisodeStatus::kRunning:
      break;
  }
  r.total = r.r1 + r.r2 + r.r4 + r.r5;
  return r;
}

CrawlerEnv::CrawlerEnv(EnvConfig config, uint64_t seed) : config_(std::move(config)), rng_(seed) {
  config_.physics.validate();
  reset();
}

Observation CrawlerEnv::reset() {
  state_ = CrawlerState{0.0, config_.initial_strain, 0.0, 0.0, 0.0};
  hist_ = ControlHistory{};
  status_ = EpisodeStatus::kRunning;
  steps_ = 0;
  const Eigen::Vector2d imu = read_imu(state_, state_, config_.physics, rng_);
  const Eigen::Vector2d tof = read_tof(state_, config_.physics, rng_);
  return {imu(0), imu(1), tof(0), tof(1)};
}

EnvStep CrawlerEnv::advance(double u) {
  if (done()) throw std::logic_error("env: advance() called on a finished episode");
  const PhysicalParams& p = config_.physics;
  const CrawlerState prev = state_;
  state_ = step(prev, u, rng_, p, config_.integrator, config_.noisy);
  hist_.push(u);
  ++steps_;

  const double s1 = to_body(state_.world(), p)(0);
  if (s1 >= config_.goal) {
    status_ = EpisodeStatus::kSuccess;
  } else if (state_.t >= config_.episode_length - 0.5 * p.dt) {
    status_ = EpisodeStatus::kFailure;
  }

  EnvStep out;
  out.state = state_;
  out.u = u;
  out.status = status_;
  const Eigen::Vector2d imu = read_imu(prev, state_, p, rng_);
  const Eigen::Vector2d tof = read_tof(state_, p, rng_);
  out.obs = {imu(0), imu(1), tof(0), tof(1)};
  out.reward = compute_reward(prev, state_, hist_, status_, p, config_.reward);
  return out;
}

TrajectoryRow make_row(const CrawlerState& state, const Observation& obs, double u, double r_total,
                       const PhysicalParams& p) {
  const Eigen::Vector4d body = to_body(state.world(), p);
  return {state.t, state.x1, state.x2, state.v1, state.v2, body(0), body(1), body(2), body(3),
          u,       obs.alpha1, obs.alpha2, obs.X1, obs.X2, r_total};
}

TrajectoryRow make_row(const EnvStep& s, const PhysicalParams& p) {
  return make_row(s.state, s.obs, s.u, s.reward.total, p);
}

namespace {
constexpr const char* kTrajectoryHeader = "t,x1,x2,v1,v2,s1,w1,s2,w2,u,alpha1,alpha2,X1,X2,r_total";
}

void write_trajectory_csv(const std::filesystem::path& path, const std::vector<TrajectoryRow>& rows) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("trajectory: cannot open '" + path.string() + "' for writing");
  os << kTrajectoryHeader << '\n' << std::setprecision(17);
  for (const auto& r : rows) {
    os << r.t << ',' << r.x1 << ',' << r.x2 << ',' << r.v1 << ',' << r.v2 << ',' << r.s1 << ',' << r.w1 << ','
       << r.s2 << ',' << r.w2 << ',' << r.u << ',' << r.alpha1 << ',' << r.alpha2 << ',' << r.X1 << ',' << r.X2
       << ',' << r.r_total << '\n';
  }
}

std::vector<TrajectoryRow> read_trajectory_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("trajectory: cannot open '" + path.string() + "'");
  std::string line;
  std::getline(is, line);
  if (line != kTrajectoryHeader) throw std::runtime_error("trajectory: unexpected header in '" + path.string() + "'");
  std::vector<TrajectoryRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    double v[15];
    int n = 0;
    while (n < 15 && std::getline(ls, cell, ',')) v[n++] = std::stod(cell);
    if (n != 15) throw std::runtime_error("trajectory: malformed row in '" + path.string() + "'");
    rows.push_back({v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11], v[12], v[13], v[14]});
  }
  return rows;
}

}  // namespace crawlrl
