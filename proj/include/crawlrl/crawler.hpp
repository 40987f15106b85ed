#pragma once

// Two-mass crawler on a line: base x1 and head x2 joined by a spring-damper,
// driven by an internal actuator force +/- B_u u, resisted by anisotropic
// sigmoid friction at each contact.
//
// World coordinates are (x1, x2, v1, v2). Body coordinates split the motion
// into the centre of mass (s1, w1) and the strain (s2, w2):
//   s1 = (m1 x1 + m2 x2) / M, s2 = x2 - x1, w1 = (m1 v1 + m2 v2) / M, w2 = v2 - v1.

#include "crawlrl/distributions.hpp"

#include <Eigen/Core>

#include <cmath>
#include <filesystem>
#include <stdexcept>
#include <vector>

namespace crawlrl {

template <typename Scalar>
using Vec4 = Eigen::Matrix<Scalar, 4, 1>;

struct PhysicalParams {
  double m1 = 0.2;        // kg
  double m2 = 0.2;        // kg
  double k = 50.0;        // N/m
  double b = 0.1;         // N s/m
  double F_sigma1 = 1.0;  // N
  double F_sigma2 = 1.0;  // N
  double B_u = 1.0;
  double N_f = 2.0;
  double eps_f = 0.01;  // m/s
  // Diffusion acting on (s1, w1, s2, w2).
  Eigen::Matrix4d noise_G = Eigen::Vector4d(0.0, 0.01, 0.0, 0.01).asDiagonal();
  double imu_bias = 0.05;  // m/s^2
  double sigma_imu = 0.2;
  double sigma_tof = 0.2;
  double X_obj1 = 5.0;  // m
  double X_obj2 = 5.0;  // m
  double dt = 0.01;     // s

  double total_mass() const { return m1 + m2; }
  double inv_reduced_mass() const { return 1.0 / m1 + 1.0 / m2; }

  // Throws std::invalid_argument on any violated invariant.
  void validate() const;
};

struct CrawlerState {
  double x1 = 0.0;
  double x2 = 0.0;
  double v1 = 0.0;
  double v2 = 0.0;
  double t = 0.0;

  Eigen::Vector4d world() const { return {x1, x2, v1, v2}; }
  static CrawlerState from_world(const Eigen::Vector4d& w, double t) { return {w(0), w(1), w(2), w(3), t}; }
  bool finite() const { return world().allFinite() && std::isfinite(t); }
};

/// Offset making sigma(0) = 0: eps_f * ln(2 / (N_f - 1)). Requires N_f > 1.
double compute_v_offset(const PhysicalParams& p);

/// Anisotropic friction multiplier
///   sigma(v) = 1/2 [ (1 + N_f) / (1 + exp(-(-v - v_off)/eps_f)) + 1 - N_f ],
/// tending to 1 as v -> -inf and (1 - N_f)/2 as v -> +inf.
template <typename Scalar>
Scalar sigmoid_friction(const Scalar& v, const PhysicalParams& p, double v_offset) {
  using std::exp;
  const Scalar z = (-v - v_offset) / p.eps_f;
  // Logistic evaluated on the side that cannot overflow.
  Scalar logistic;
  if (z >= 0.0) {
    logistic = 1.0 / (1.0 + exp(-z));
  } else {
    const Scalar e = exp(z);
    logistic = e / (1.0 + e);
  }
  return 0.5 * ((1.0 + p.N_f) * logistic + 1.0 - p.N_f);
}

template <typename Scalar>
Scalar sigmoid_friction(const Scalar& v, const PhysicalParams& p) {
  return sigmoid_friction(v, p, compute_v_offset(p));
}

template <typename Scalar>
Vec4<Scalar> to_body(const Vec4<Scalar>& world, const PhysicalParams& p) {
  const double M = p.total_mass();
  return {(p.m1 * world(0) + p.m2 * world(1)) / M, (p.m1 * world(2) + p.m2 * world(3)) / M, world(1) - world(0),
          world(3) - world(2)};
}

template <typename Scalar>
Vec4<Scalar> from_body(const Vec4<Scalar>& body, const PhysicalParams& p) {
  const double M = p.total_mass();
  return {body(0) - p.m2 / M * body(2), body(0) + p.m1 / M * body(2), body(1) - p.m2 / M * body(3),
          body(1) + p.m1 / M * body(3)};
}

/// d/dt (x1, x2, m1 v1, m2 v2) for world state (x1, x2, v1, v2).
template <typename Scalar>
Vec4<Scalar> dynamics_rhs(const Vec4<Scalar>& world, double u, const PhysicalParams& p) {
  const double v_off = compute_v_offset(p);
  const Scalar internal = -p.k * (world(0) - world(1)) - p.b * (world(2) - world(3));
  return {world(2), world(3),
          internal + p.F_sigma1 * sigmoid_friction(world(2), p, v_off) + p.B_u * u,
          -internal + p.F_sigma2 * sigmoid_friction(world(3), p, v_off) - p.B_u * u};
}

/// d/dt (x1, x2, v1, v2).
template <typename Scalar>
Vec4<Scalar> world_rate(const Vec4<Scalar>& world, double u, const PhysicalParams& p) {
  Vec4<Scalar> d = dynamics_rhs(world, u, p);
  d(2) /= p.m1;
  d(3) /= p.m2;
  return d;
}

/// d/dt (s1, w1, s2, w2). The contact velocities are recovered from the body
/// coordinates, v1 = w1 - m2/M w2 and v2 = w1 + m1/M w2.
template <typename Scalar>
Vec4<Scalar> body_rhs(const Vec4<Scalar>& body, double u, const PhysicalParams& p) {
  const double M = p.total_mass();
  const double mu = p.inv_reduced_mass();
  const double v_off = compute_v_offset(p);
  const Scalar& w1 = body(1);
  const Scalar& s2 = body(2);
  const Scalar& w2 = body(3);
  const Scalar sig1 = sigmoid_friction(Scalar((M * w1 - p.m2 * w2) / M), p, v_off);
  const Scalar sig2 = sigmoid_friction(Scalar((M * w1 + p.m1 * w2) / M), p, v_off);
  return {w1, (p.F_sigma1 * sig1 + p.F_sigma2 * sig2) / M, w2,
          -p.k * mu * s2 - p.b * mu * w2 - p.F_sigma1 / p.m1 * sig1 + p.F_sigma2 / p.m2 * sig2 - p.B_u * mu * u};
}

/// d(body_rhs)/d(s1, w1, s2, w2) at the given body state.
Eigen::Matrix4d body_jacobian(const Eigen::Vector4d& body, double u, const PhysicalParams& p);

enum class Integrator { kEuler, kRk4 };

/// Advances one dt. The deterministic part integrates the world-coordinate
/// dynamics; when noisy, G sqrt(dt) xi is added in body coordinates.
/// Throws NumericError if the state stops being finite.
CrawlerState step(const CrawlerState& state, double u, Rng& rng, const PhysicalParams& p,
                  Integrator integrator = Integrator::kRk4, bool noisy = true);

struct MomentState {
  Eigen::Vector4d mean = Eigen::Vector4d::Zero();  // (s1, w1, s2, w2)
  Eigen::Matrix4d cov = Eigen::Matrix4d::Zero();
};

enum class CovarianceForm {
  // Homogeneous J^T S + S J with no diffusion term.
  kLiteral,
  // J S + S J^T + G G^T.
  kLyapunov,
};

/// One Euler step of the mean and covariance equations. The covariance uses
/// the congruence Phi S Phi^T with Phi = I + dt J (first-order equivalent to
/// the Euler update, but PSD-preserving for stiff friction), plus
/// dt G G^T under kLyapunov. Throws std::invalid_argument on a non-PSD input.
MomentState propagate_moments(const MomentState& m, double u, const PhysicalParams& p, double dt,
                              CovarianceForm form = CovarianceForm::kLiteral);

struct Observation {
  double alpha1 = 0.0;
  double alpha2 = 0.0;
  double X1 = 0.0;
  double X2 = 0.0;

  Eigen::Vector4d vector() const { return {alpha1, alpha2, X1, X2}; }
};

/// alpha_i = (v_i(next) - v_i(prev)) / dt + bias + N(0, sigma_imu^2).
Eigen::Vector2d read_imu(const CrawlerState& prev, const CrawlerState& next, const PhysicalParams& p, Rng& rng);
/// X_i = |X_obj_i - x_i| + N(0, sigma_tof^2).
Eigen::Vector2d read_tof(const CrawlerState& state, const PhysicalParams& p, Rng& rng);

struct RewardWeights {
  double k1 = 0.25;
  double k2 = 0.5;
  double k3 = 0.01;
  double k4 = 0.01;
  double k5 = 0.01;
  double k6 = 0.01;
  double eps = 0.01;
  double success_bonus = 2.0;
  double failure_penalty = -1.0;
};

/// u(t), u(t - dt), u(t - 2 dt).
struct ControlHistory {
  double u = 0.0;
  double u_prev = 0.0;
  double u_prev2 = 0.0;

  void push(double next) {
    u_prev2 = u_prev;
    u_prev = u;
    u = next;
  }
};

enum class EpisodeStatus { kRunning, kSuccess, kFailure };

struct RewardBreakdown {
  double r1 = 0.0;  // progress
  double r2 = 0.0;  // control effort
  double r4 = 0.0;  // self-intersection
  double r5 = 0.0;  // terminal
  double total = 0.0;
};

RewardBreakdown compute_reward(const CrawlerState& prev, const CrawlerState& cur, const ControlHistory& hist,
                               EpisodeStatus status, const PhysicalParams& p, const RewardWeights& w);

struct EnvConfig {
  PhysicalParams physics;
  RewardWeights reward;
  Integrator integrator = Integrator::kRk4;
  bool noisy = true;
  double episode_length = 200.0;  // s
  double initial_strain = 0.1;    // m, x2 - x1 at reset
  double goal = 0.5;              // success when s1 >= goal
};

struct EnvStep {
  CrawlerState state;
  Observation obs;
  RewardBreakdown reward;
  EpisodeStatus status = EpisodeStatus::kRunning;
  double u = 0.0;
  bool done() const { return status != EpisodeStatus::kRunning; }
};

/// Stateful episode wrapper around step(), the sensors and the reward.
class CrawlerEnv {
 public:
  CrawlerEnv(EnvConfig config, uint64_t seed);

  Observation reset();
  EnvStep advance(double u);

  const CrawlerState& state() const { return state_; }
  const EnvConfig& config() const { return config_; }
  bool done() const { return status_ != EpisodeStatus::kRunning; }
  int64_t steps() const { return steps_; }
  Rng& rng() { return rng_; }

 private:
  EnvConfig config_;
  Rng rng_;
  CrawlerState state_;
  ControlHistory hist_;
  EpisodeStatus status_ = EpisodeStatus::kRunning;
  int64_t steps_ = 0;
};

struct TrajectoryRow {
  double t, x1, x2, v1, v2, s1, w1, s2, w2, u, alpha1, alpha2, X1, X2, r_total;
};

TrajectoryRow make_row(const EnvStep& s, const PhysicalParams& p);
TrajectoryRow make_row(const CrawlerState& state, const Observation& obs, double u, double r_total,
                       const PhysicalParams& p);

/// Comma-separated rows with a header line:
/// t,x1,x2,v1,v2,s1,w1,s2,w2,u,alpha1,alpha2,X1,X2,r_total
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<TrajectoryRow>& rows);
std::vector<TrajectoryRow> read_trajectory_csv(const std::filesystem::path& path);

}  // namespace crawlrl
