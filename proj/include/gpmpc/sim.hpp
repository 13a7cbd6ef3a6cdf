#pragma once

#include "gpmpc/mpc.hpp"
#include "gpmpc/residual_dataset.hpp"
#include "gpmpc/trajectory.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gpmpc {

/// Ground-truth aerodynamic model: linear rotor drag plus quadratic fuselage
/// drag, both diagonal in the body frame. `quad_y_extra` models a vertical
/// drag board mounted along the body x axis, adding asymmetric quadratic drag
/// in y.
struct DragConfig {
  Vec3 lin = Vec3::Zero();    // [1/s]
  Vec3 quad = Vec3::Zero();   // [1/m]
  double quad_y_extra = 0.0;  // [1/m]
};

struct NoiseConfig {
  double force_std = 0.0;         // [N], per-step white force on the body
  double torque_std = 0.0;        // [N m]
  double motor_std = 0.0;         // [N], per-step thrust noise per rotor
  double motor_bias_scale = 0.0;  // relative, drawn once per rollout per rotor
};

struct SimConfig {
  double sim_dt = 5e-4;  // [s]
  DragConfig drag;
  NoiseConfig noise;

  void validate() const;
  bool disturbance_free() const;
};

/// Owned by exactly one rollout; carries its private RNG stream.
struct SimWorld {
  QuadState x;
  double t = 0.0;
  SimConfig cfg;
  QuadParams params;
  Vec4 motor_bias = Vec4::Ones();
  std::mt19937_64 rng;

  static SimWorld create(const SimConfig& cfg, const QuadParams& params, const QuadState& x0,
                         std::uint64_t seed);
};

/// Continuous-time plant model under a held noise draw.
StateDerivative plant_derivative(const QuadState& x, const RotorThrusts& u_applied,
                                 const SimConfig& cfg, const QuadParams& params,
                                 const Vec3& force_noise, const Vec3& torque_noise);

/// Advances the world by `duration` (a multiple of sim_dt), applying the
/// per-motor bias and per-step motor noise to the commanded thrusts.
void step_sim(SimWorld& world, const RotorThrusts& u_cmd, double duration);

struct TickTelemetry {
  double t = 0.0;
  double solve_ms = 0.0;
  double kkt = 0.0;
  int sqp_iters = 0;
  double speed = 0.0;    // |v| at the tick
  double pos_err = 0.0;  // distance to the reference position at the tick
};

struct RolloutResult {
  std::vector<FlightLogRecord> log;
  std::vector<TickTelemetry> ticks;
  double rmse = 0.0;  // position RMSE over all ticks [m]
  double max_speed = 0.0;
  bool crashed = false;
  std::string crash_reason;
  double mean_solve_ms = 0.0;
  double p95_solve_ms = 0.0;
};

struct RolloutOptions {
  double control_dt = 0.01;
  std::uint64_t seed = 1;
  double crash_pos_tol = 10.0;  // [m] tracking error treated as loss of control
};

/**
 * Closed-loop rollout: at every control tick the MPC reads the exact plant
 * state (perfect odometry), solves one RTI step and the first input is held
 * for control_dt of simulation. Solver failure or a diverged state flags the
 * rollout as crashed with the partial log kept.
 */
RolloutResult run_closed_loop(const ReferenceTrajectory& traj, const MpcProblem& prob,
                              const SolverSettings& settings, const SimConfig& sim_cfg,
                              const RolloutOptions& opt);

struct SpeedBin {
  double lo = 0.0, hi = 0.0;
  double rmse = 0.0;
  std::size_t count = 0;
};

/// Per-speed-bin position RMSE by actual speed |v|; empty bins are omitted.
std::vector<SpeedBin> speed_binned_rmse(const RolloutResult& result,
                                        std::span<const double> edges);

double position_rmse(std::span<const Vec3> actual, std::span<const Vec3> reference);

}  // namespace gpmpc
