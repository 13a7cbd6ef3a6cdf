#pragma once

#include "gpmpc/quad_model.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gpmpc {

struct TrajectoryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One reference sample: full state plus feedforward rotor thrusts.
struct RefSample {
  double t = 0.0;
  QuadState x;
  RotorThrusts u = RotorThrusts::Zero();
};

struct ReferenceTrajectory {
  std::vector<RefSample> samples;
  double sample_dt = 0.01;

  double duration() const { return samples.empty() ? 0.0 : samples.back().t; }
  size_t size() const { return samples.size(); }
};

enum class TrajectoryKind { Circle, Lemniscate, RandomPoly };

struct RandomPolyParams {
  int n_waypoints = 7;
  Vec3 box_min{-22.0, -22.0, -12.0};
  Vec3 box_max{22.0, 22.0, 12.0};
  double segment_speed = 14.5;   // target average path speed [m/s]
  double axis_speed_cap = 16.0;  // per-axis velocity limit [m/s]
  double min_segment_time = 0.9;
};

struct TrajectorySpec {
  TrajectoryKind kind = TrajectoryKind::Circle;
  double v_peak = 4.0;        // target peak speed [m/s]
  double scale = 5.0;         // circle radius / lemniscate x-amplitude [m]
  double z0 = 3.0;            // flight altitude [m]
  double duration = 20.0;     // [s]; derived from waypoints for random polys
  double sample_dt = 0.01;    // [s]
  double ramp_fraction = 0.3; // fraction of duration spent ramping up (and down)
  std::uint64_t seed = 0;     // random polynomials only
  RandomPolyParams random;

  void validate() const;
};

/// Position and time derivatives up to snap; everything the feedforward
/// references need.
struct FlatOutput {
  Vec3 p{Vec3::Zero()}, v{Vec3::Zero()}, a{Vec3::Zero()}, j{Vec3::Zero()}, s{Vec3::Zero()};
};

/// Attitude at a fixed heading, body rates and mass-normalized collective
/// thrust of a flat output; falls back to a level attitude near free fall.
void flat_attitude(const FlatOutput& f, const Vec3& gravity, double yaw, Quat& q, Vec3& omega,
                   double& thrust_acc);

/// Full reference sample from flat outputs. `omega_dot` feeds the torque and
/// rotor-thrust allocation.
RefSample flat_reference(const FlatOutput& f, const Vec3& omega_dot, double t,
                         const QuadParams& params, double yaw = 0.0);

/// Planar circle of radius `scale`, ramped 0 -> v_peak -> 0.
ReferenceTrajectory circle(const TrajectorySpec& spec, const QuadParams& params);

/// Planar figure-eight x = A cos(sqrt2 u), y = A sin(sqrt2 u) cos(sqrt2 u),
/// time-warped by the ramp policy so the peak sampled speed hits v_peak.
ReferenceTrajectory lemniscate(const TrajectorySpec& spec, const QuadParams& params);

/// Underlying flat outputs of a generated path, with segment joint times;
/// used for replay and construction checks.
struct FlatPathHandle {
  std::function<FlatOutput(double)> eval;
  std::vector<double> joint_times;
  double duration = 0.0;
  double yaw = 0.0;
};

/// Seeded C^4 piecewise polynomial through random waypoints; per-axis speeds
/// are capped by time-stretching, never clipped.
ReferenceTrajectory random_polynomial(const TrajectorySpec& spec, const QuadParams& params);
FlatPathHandle random_polynomial_path(const TrajectorySpec& spec, const QuadParams& params);

ReferenceTrajectory generate_trajectory(const TrajectorySpec& spec, const QuadParams& params);

/**
 * Reference window for one MPC solve: N+1 samples starting at time t spaced
 * node_dt apart. node_dt must be an integer multiple of the trajectory's
 * sample_dt; past the end the final hover sample is held.
 */
std::vector<RefSample> reference_window(const ReferenceTrajectory& traj, double t, int n,
                                        double node_dt);

/// CSV export/import, header
/// `t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,T0,T1,T2,T3`.
void save_trajectory_csv(const ReferenceTrajectory& traj, const std::string& path);
ReferenceTrajectory load_trajectory_csv(const std::string& path);

}  // namespace gpmpc
