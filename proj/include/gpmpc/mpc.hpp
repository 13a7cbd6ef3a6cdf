#pragma once

#include "gpmpc/augmentation.hpp"
#include "gpmpc/box_qp.hpp"
#include "gpmpc/quad_model.hpp"
#include "gpmpc/trajectory.hpp"

#include <span>
#include <variant>
#include <vector>

namespace gpmpc {

using Vec12 = Eigen::Matrix<double, 12, 1>;
using Mat12 = Eigen::Matrix<double, 12, 12>;
using Mat12x4 = Eigen::Matrix<double, 12, 4>;

// ---------------------------------------------------------------------------
// Error-state algebra: 12-dim local coordinates (position, attitude tangent,
// velocity, body rates) around a reference state. The attitude block is the
// quaternion log of the relative rotation, which removes the unit-norm
// constraint and the double cover from the QP.
// ---------------------------------------------------------------------------

QuadState state_boxplus(const QuadState& x, const Vec12& delta);
Vec12 state_boxminus(const QuadState& a, const QuadState& b);  // a (-) b

/// d(x boxplus delta)/d(delta) at delta = 0, in ambient coordinates.
Eigen::Matrix<double, 13, 12> boxplus_jacobian(const QuadState& x);

/// d(a boxminus b)/d(a) in ambient coordinates.
Eigen::Matrix<double, 12, 13> boxminus_jacobian(const QuadState& a, const QuadState& b);

// ---------------------------------------------------------------------------
// Problem definition
// ---------------------------------------------------------------------------

struct NominalMode {};
struct RdrvMode {
  RdrvModel model;
};
struct GpMode {
  GpCorrection correction;
  /// Evaluate the correction once per shooting node and hold it through the
  /// RK4 stages instead of re-evaluating per stage.
  bool per_node = false;
};
using DynamicsMode = std::variant<NominalMode, RdrvMode, GpMode>;

struct MpcProblem {
  int horizon = 20;       // shooting nodes N
  double node_dt = 0.05;  // [s], horizon T = N * node_dt
  Mat12 Q = Mat12::Identity();
  Eigen::Matrix4d R = 0.1 * Eigen::Matrix4d::Identity();
  double u_min = 0.0;
  double u_max = 9.81;
  DynamicsMode mode;
  QuadParams params;

  static Mat12 diagonal_weights(double pos, double att, double vel, double omega);
  void validate() const;
};

struct SolverSettings {
  int max_sqp_iters = 1;   // 1 = real-time iteration
  double qp_tol = 1e-10;
  double kkt_tol = 1e-6;   // full-SQP termination threshold
  bool line_search = false;
  bool warm_start = true;
};

struct MpcSolution {
  std::vector<QuadState> x_traj;      // N+1 states, x_traj[0] == x_init
  std::vector<RotorThrusts> u_traj;   // N inputs, within bounds
  double kkt_residual = 0.0;
  double solve_time = 0.0;            // wall clock [s]
  int sqp_iters = 0;
};

struct SolverError : std::runtime_error {
  SolverError(const std::string& msg, MpcSolution last)
      : std::runtime_error(msg), last_iterate(std::move(last)) {}
  MpcSolution last_iterate;
};

// ---------------------------------------------------------------------------
// Pieces exposed for testing and composition
// ---------------------------------------------------------------------------

/// One node step of the prediction model (mode-dependent RK4).
QuadState integrate_node(const QuadState& x, const RotorThrusts& u, const MpcProblem& prob);

struct NodeLinearization {
  Mat12 A;
  Mat12x4 B;
  Vec12 c;  // defect: F(x, u) boxminus x_next
};

/// Discrete-time Jacobians of the one-step map in error coordinates, plus the
/// shooting defect against x_next.
NodeLinearization linearize_dynamics(const QuadState& x, const RotorThrusts& u,
                                     const QuadState& x_next, const MpcProblem& prob);

/// Reference-tracking cost of a candidate trajectory.
double build_cost(std::span<const QuadState> x_traj, std::span<const RotorThrusts> u_traj,
                  std::span<const RefSample> window, const MpcProblem& prob);

/**
 * Multiple-shooting SQP solver with Gauss-Newton Hessian, condensed to a
 * box-constrained QP on the inputs. One iteration per call in the default
 * real-time-iteration mode, with warm-started shifting between calls. A
 * solver instance holds mutable warm-start state: one instance per control
 * loop, never shared.
 */
class MpcSolver {
 public:
  MpcSolver(MpcProblem prob, SolverSettings settings);

  /// Solves from x_init against a reference window of horizon+1 samples
  /// spaced node_dt apart (window[0].t is "now").
  MpcSolution solve(const QuadState& x_init, std::span<const RefSample> window);

  void reset();
  const MpcProblem& problem() const { return prob_; }
  const SolverSettings& settings() const { return settings_; }

 private:
  void cold_start(std::span<const RefSample> window);
  void shift_warm_state(double t_now);
  double sqp_iteration(const QuadState& x_init, std::span<const RefSample> window);

  MpcProblem prob_;
  SolverSettings settings_;
  std::vector<QuadState> x_lin_;
  std::vector<RotorThrusts> u_lin_;
  bool warm_ = false;
  double t_last_ = 0.0;
  Eigen::VectorXd qp_x_warm_;
  std::vector<std::int8_t> qp_active_warm_;
  double merit_rho_ = 10.0;
};

}  // namespace gpmpc
