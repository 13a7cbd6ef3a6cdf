#include "gpmpc/mpc.hpp"

#include <chrono>
#include <cmath>

namespace gpmpc {

namespace {

using V13 = Eigen::Matrix<double, 13, 1>;
using M13 = Eigen::Matrix<double, 13, 13>;
using M13x4 = Eigen::Matrix<double, 13, 4>;
using M13x3 = Eigen::Matrix<double, 13, 3>;
using M3x13 = Eigen::Matrix<double, 3, 13>;

constexpr double kHessianReg = 1e-8;

Eigen::Matrix<double, 4, 3> exp_jacobian_at_zero() {
  Eigen::Matrix<double, 4, 3> d;
  d.setZero();
  d.block<3, 3>(1, 0) = 0.5 * Mat3::Identity();
  return d;
}

}  // namespace

QuadState state_boxplus(const QuadState& x, const Vec12& delta) {
  QuadState out;
  out.p = x.p + delta.segment<3>(0);
  out.q = quat_normalized(quat_mul(x.q, quat_exp(delta.segment<3>(3))));
  out.v = x.v + delta.segment<3>(6);
  out.w = x.w + delta.segment<3>(9);
  return out;
}

Vec12 state_boxminus(const QuadState& a, const QuadState& b) {
  Vec12 d;
  d.segment<3>(0) = a.p - b.p;
  d.segment<3>(3) = quat_log(quat_mul(quat_conjugate(b.q), a.q));
  d.segment<3>(6) = a.v - b.v;
  d.segment<3>(9) = a.w - b.w;
  return d;
}

Eigen::Matrix<double, 13, 12> boxplus_jacobian(const QuadState& x) {
  Eigen::Matrix<double, 13, 12> t;
  t.setZero();
  t.block<3, 3>(0, 0) = Mat3::Identity();
  t.block<4, 3>(3, 3) = quat_left_matrix(x.q) * exp_jacobian_at_zero();
  t.block<3, 3>(7, 6) = Mat3::Identity();
  t.block<3, 3>(10, 9) = Mat3::Identity();
  return t;
}

Eigen::Matrix<double, 12, 13> boxminus_jacobian(const QuadState& a, const QuadState& b) {
  Eigen::Matrix<double, 12, 13> p;
  p.setZero();
  p.block<3, 3>(0, 0) = Mat3::Identity();
  const Quat dq = quat_mul(quat_conjugate(b.q), a.q);
  p.block<3, 4>(3, 3) = quat_log_jac(dq) * quat_left_matrix(quat_conjugate(b.q));
  p.block<3, 3>(6, 7) = Mat3::Identity();
  p.block<3, 3>(9, 10) = Mat3::Identity();
  return p;
}

Mat12 MpcProblem::diagonal_weights(double pos, double att, double vel, double omega) {
  Vec12 d;
  d << pos, pos, pos, att, att, att, vel, vel, vel, omega, omega, omega;
  return d.asDiagonal();
}

void MpcProblem::validate() const {
  if (horizon < 2) throw std::invalid_argument("MpcProblem: horizon must be >= 2");
  if (!(node_dt > 0.0)) throw std::invalid_argument("MpcProblem: node_dt must be positive");
  if (!(u_min >= 0.0 && u_min < u_max))
    throw std::invalid_argument("MpcProblem: need 0 <= u_min < u_max");
  if ((Q - Q.transpose()).norm() > 1e-9)
    throw std::invalid_argument("MpcProblem: Q must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat12> es(Q);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw std::invalid_argument("MpcProblem: Q must be positive semidefinite");
  Eigen::LLT<Eigen::Matrix4d> llt(R);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("MpcProblem: R must be positive definite");
  params.validate();
}

// ---------------------------------------------------------------------------
// Stage dynamics dispatch
// ---------------------------------------------------------------------------

namespace {

// Per-RK4-stage vector field together with its ambient Jacobians. For the
// node-held GP variant the body correction is frozen at the node state and
// its sensitivity is propagated through the `fa` channel.
struct StageDynamics {
  const MpcProblem& prob;
  bool node_held = false;
  Vec3 a_held = Vec3::Zero();
  M3x13 a_jac = M3x13::Zero();  // d a_held / d x_node

  explicit StageDynamics(const MpcProblem& p, const QuadState& node_state) : prob(p) {
    if (const GpMode* gp = std::get_if<GpMode>(&prob.mode); gp && gp->per_node) {
      node_held = true;
      const Vec3 v_b = node_state.body_velocity();
      Vec3 dh;
      gp_correction_value_grad(gp->correction, v_b, a_held, dh);
      a_jac.block<3, 4>(0, 3) =
          dh.asDiagonal() * quat_rotate_conj_jac_q(node_state.q, node_state.v);
      a_jac.block<3, 3>(0, 7) =
          dh.asDiagonal() * quat_to_rot_matrix(quat_conjugate(node_state.q));
    }
  }

  V13 eval(const V13& xv, const RotorThrusts& u) const {
    const QuadState s = QuadState::from_vector(xv);
    StateDerivative d;
    if (node_held) {
      d = f_dyn(s, u, prob.params);
      d.dv += quat_rotate(s.q, a_held);
    } else if (const GpMode* gp = std::get_if<GpMode>(&prob.mode)) {
      d = f_corrected(s, u, prob.params, gp->correction);
    } else if (const RdrvMode* rd = std::get_if<RdrvMode>(&prob.mode)) {
      d = f_rdrv(s, u, prob.params, rd->model);
    } else {
      d = f_dyn(s, u, prob.params);
    }
    return d.to_vector();
  }

  void jac(const V13& xv, const RotorThrusts& u, M13& fx, M13x4& fu, M13x3& fa) const {
    const QuadState s = QuadState::from_vector(xv);
    fa.setZero();
    if (node_held) {
      f_dyn_jac(s, u, prob.params, fx, fu);
      fx.block<3, 4>(7, 3) += quat_rotate_jac_q(s.q, a_held);
      fa.block<3, 3>(7, 0) = quat_to_rot_matrix(s.q);
    } else if (const GpMode* gp = std::get_if<GpMode>(&prob.mode)) {
      f_corrected_jac(s, u, prob.params, gp->correction, fx, fu);
    } else if (const RdrvMode* rd = std::get_if<RdrvMode>(&prob.mode)) {
      f_rdrv_jac(s, u, prob.params, rd->model, fx, fu);
    } else {
      f_dyn_jac(s, u, prob.params, fx, fu);
    }
  }
};

// One RK4 node step in ambient coordinates with optional sensitivity
// propagation through the stages (including the frozen-correction channel).
QuadState rk4_node(const QuadState& x, const RotorThrusts& u, const MpcProblem& prob,
                   M13* fx_out, M13x4* fu_out) {
  const StageDynamics dyn(prob, x);
  const double dt = prob.node_dt;

  const V13 x1 = x.to_vector();
  const V13 k1 = dyn.eval(x1, u);
  const V13 x2 = x1 + 0.5 * dt * k1;
  const V13 k2 = dyn.eval(x2, u);
  const V13 x3 = x1 + 0.5 * dt * k2;
  const V13 k3 = dyn.eval(x3, u);
  const V13 x4 = x1 + dt * k3;
  const V13 k4 = dyn.eval(x4, u);
  V13 raw = x1 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (!raw.allFinite()) throw std::runtime_error("mpc: non-finite state in node integration");

  const Vec4 q_raw = raw.segment<4>(3);
  const double nq = q_raw.norm();
  const double sign = q_raw[0] < 0.0 ? -1.0 : 1.0;
  raw.segment<4>(3) = sign * q_raw / nq;

  if (fx_out) {
    M13 a;
    M13x4 b;
    M13x3 c;
    dyn.jac(x1, u, a, b, c);
    const M13 k1x = a;
    const M13x4 k1u = b;
    const M13x3 k1a = c;
    dyn.jac(x2, u, a, b, c);
    const M13 k2x = a * (M13::Identity() + 0.5 * dt * k1x);
    const M13x4 k2u = a * (0.5 * dt) * k1u + b;
    const M13x3 k2a = a * (0.5 * dt) * k1a + c;
    dyn.jac(x3, u, a, b, c);
    const M13 k3x = a * (M13::Identity() + 0.5 * dt * k2x);
    const M13x4 k3u = a * (0.5 * dt) * k2u + b;
    const M13x3 k3a = a * (0.5 * dt) * k2a + c;
    dyn.jac(x4, u, a, b, c);
    const M13 k4x = a * (M13::Identity() + dt * k3x);
    const M13x4 k4u = a * dt * k3u + b;
    const M13x3 k4a = a * dt * k3a + c;

    M13 fx = M13::Identity() + (dt / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
    M13x4 fu = (dt / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u);
    if (dyn.node_held) {
      const M13x3 fa = (dt / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a);
      fx += fa * dyn.a_jac;
    }

    // renormalization (and hemisphere flip) of the quaternion block
    const Vec4 q_hat = q_raw / nq;
    const Mat4 jq = sign * (Mat4::Identity() - q_hat * q_hat.transpose()) / nq;
    fx.middleRows<4>(3) = jq * fx.middleRows<4>(3);
    fu.middleRows<4>(3) = jq * fu.middleRows<4>(3);
    *fx_out = fx;
    *fu_out = fu;
  }
  return QuadState::from_vector(raw);
}

}  // namespace

QuadState integrate_node(const QuadState& x, const RotorThrusts& u, const MpcProblem& prob) {
  return rk4_node(x, u, prob, nullptr, nullptr);
}

NodeLinearization linearize_dynamics(const QuadState& x, const RotorThrusts& u,
                                     const QuadState& x_next, const MpcProblem& prob) {
  M13 fx;
  M13x4 fu;
  const QuadState next = rk4_node(x, u, prob, &fx, &fu);
  const auto t = boxplus_jacobian(x);
  const auto p = boxminus_jacobian(next, x_next);
  NodeLinearization lin;
  lin.A = p * fx * t;
  lin.B = p * fu;
  lin.c = state_boxminus(next, x_next);
  if (!lin.A.allFinite() || !lin.B.allFinite() || !lin.c.allFinite())
    throw std::runtime_error("mpc: non-finite dynamics linearization");
  return lin;
}

double build_cost(std::span<const QuadState> x_traj, std::span<const RotorThrusts> u_traj,
                  std::span<const RefSample> window, const MpcProblem& prob) {
  const size_t n = u_traj.size();
  double cost = 0.0;
  for (size_t k = 0; k < n; ++k) {
    const Vec12 e = state_boxminus(x_traj[k], window[k].x);
    const Vec4 r = u_traj[k] - window[k].u;
    cost += e.dot(prob.Q * e) + r.dot(prob.R * r);
  }
  const Vec12 e_n = state_boxminus(x_traj[n], window[n].x);
  cost += e_n.dot(prob.Q * e_n);
  return cost;
}

// ---------------------------------------------------------------------------
// Solver
// ---------------------------------------------------------------------------

MpcSolver::MpcSolver(MpcProblem prob, SolverSettings settings)
    : prob_(std::move(prob)), settings_(settings) {
  prob_.validate();
  reset();
}

void MpcSolver::reset() {
  warm_ = false;
  x_lin_.assign(prob_.horizon + 1, QuadState{});
  u_lin_.assign(prob_.horizon, RotorThrusts::Constant(prob_.params.hover_thrust()));
  qp_x_warm_ = Eigen::VectorXd::Zero(4 * prob_.horizon);
  qp_active_warm_.assign(4 * prob_.horizon, 0);
  merit_rho_ = 10.0;
}

void MpcSolver::cold_start(std::span<const RefSample> window) {
  for (int k = 0; k <= prob_.horizon; ++k) x_lin_[k] = window[k].x;
  for (int k = 0; k < prob_.horizon; ++k)
    u_lin_[k] = window[k].u.cwiseMax(prob_.u_min).cwiseMin(prob_.u_max);
  qp_x_warm_.setZero();
  std::fill(qp_active_warm_.begin(), qp_active_warm_.end(), 0);
  warm_ = true;
  t_last_ = window[0].t;
}

void MpcSolver::shift_warm_state(double t_now) {
  const int n = prob_.horizon;
  const long shift = std::lround(std::floor((t_now - t_last_) / prob_.node_dt + 1e-9));
  if (shift < 0 || shift > n) {
    warm_ = false;
    return;
  }
  if (shift == 0) return;
  for (int k = 0; k + shift <= n; ++k) x_lin_[k] = x_lin_[k + shift];
  for (int k = n - static_cast<int>(shift) + 1; k <= n; ++k) x_lin_[k] = x_lin_[n];
  for (int k = 0; k + shift < n; ++k) u_lin_[k] = u_lin_[k + shift];
  for (int k = n - static_cast<int>(shift); k < n; ++k) u_lin_[k] = u_lin_[n - 1];

  const long nu_shift = 4 * shift;
  const long nu = 4 * n;
  for (long i = 0; i + nu_shift < nu; ++i) {
    qp_x_warm_[i] = qp_x_warm_[i + nu_shift];
    qp_active_warm_[i] = qp_active_warm_[i + nu_shift];
  }
  for (long i = nu - nu_shift; i < nu; ++i) {
    qp_x_warm_[i] = 0.0;
    qp_active_warm_[i] = 0;
  }
  t_last_ += shift * prob_.node_dt;
}

double MpcSolver::sqp_iteration(const QuadState& x_init, std::span<const RefSample> window) {
  const int n = prob_.horizon;
  const int nu = 4 * n;

  // Linearize dynamics and cost along the shooting trajectory.
  std::vector<NodeLinearization> lin(n);
  double defect_inf = 0.0;
  for (int k = 0; k < n; ++k) {
    lin[k] = linearize_dynamics(x_lin_[k], u_lin_[k], x_lin_[k + 1], prob_);
    defect_inf = std::max(defect_inf, lin[k].c.cwiseAbs().maxCoeff());
  }

  std::vector<Mat12> e_jac(n + 1);
  std::vector<Vec12> e_val(n + 1);
  for (int k = 0; k <= n; ++k) {
    e_val[k] = state_boxminus(x_lin_[k], window[k].x);
    e_jac[k] = boxminus_jacobian(x_lin_[k], window[k].x) * boxplus_jacobian(x_lin_[k]);
  }

  // Condense the states: dx_k = m_k + M_k dU with dx_0 = d0 fixed.
  const Vec12 d0 = state_boxminus(x_init, x_lin_[0]);
  std::vector<Vec12> m(n + 1);
  m[0] = d0;
  Eigen::MatrixXd big_m = Eigen::MatrixXd::Zero(12 * (n + 1), nu);
  for (int k = 0; k < n; ++k) {
    m[k + 1] = lin[k].A * m[k] + lin[k].c;
    if (k > 0)
      big_m.middleRows<12>(12 * (k + 1)).leftCols(4 * k) =
          lin[k].A * big_m.middleRows<12>(12 * k).leftCols(4 * k);
    big_m.block<12, 4>(12 * (k + 1), 4 * k) = lin[k].B;
  }

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(nu, nu);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(nu);
  for (int k = 1; k <= n; ++k) {
    const int nc = 4 * k;
    const Eigen::MatrixXd w = e_jac[k] * big_m.middleRows<12>(12 * k).leftCols(nc);
    const Vec12 b = e_val[k] + e_jac[k] * m[k];
    const Eigen::MatrixXd qw = prob_.Q * w;
    h.topLeftCorner(nc, nc) += 2.0 * w.transpose() * qw;
    grad.head(nc) += 2.0 * w.transpose() * (prob_.Q * b);
  }
  Eigen::VectorXd lb(nu), ub(nu);
  for (int k = 0; k < n; ++k) {
    h.block<4, 4>(4 * k, 4 * k) += 2.0 * prob_.R;
    grad.segment<4>(4 * k) += 2.0 * prob_.R * (u_lin_[k] - window[k].u);
    lb.segment<4>(4 * k) = Vec4::Constant(prob_.u_min) - u_lin_[k];
    ub.segment<4>(4 * k) = Vec4::Constant(prob_.u_max) - u_lin_[k];
  }
  h.diagonal().array() += 2.0 * kHessianReg;

  const BoxQpResult qp = solve_box_qp(h, grad, lb, ub, &qp_x_warm_, &qp_active_warm_,
                                      settings_.qp_tol);
  if (!qp.x.allFinite()) throw std::runtime_error("mpc: QP returned non-finite step");
  qp_x_warm_ = qp.x;
  qp_active_warm_ = qp.active;

  std::vector<Vec12> dx(n + 1);
  dx[0] = d0;
  for (int k = 1; k <= n; ++k)
    dx[k] = m[k] + big_m.middleRows<12>(12 * k).leftCols(4 * k) * qp.x.head(4 * k);

  // Step length: full RTI step, or backtracking on an exact-penalty merit.
  double alpha = 1.0;
  if (settings_.line_search) {
    // penalty weight from the equality multiplier recursion
    std::vector<Vec12> lambda(n + 1);
    lambda[n] = 2.0 * e_jac[n].transpose() * (prob_.Q * (e_val[n] + e_jac[n] * dx[n]));
    double lambda_inf = lambda[n].cwiseAbs().maxCoeff();
    for (int k = n - 1; k >= 1; --k) {
      lambda[k] = 2.0 * e_jac[k].transpose() * (prob_.Q * (e_val[k] + e_jac[k] * dx[k])) +
                  lin[k].A.transpose() * lambda[k + 1];
      lambda_inf = std::max(lambda_inf, lambda[k].cwiseAbs().maxCoeff());
    }
    merit_rho_ = std::max({merit_rho_, 1.5 * lambda_inf, 10.0});

    auto merit = [&](double a) {
      std::vector<QuadState> xs(n + 1);
      std::vector<RotorThrusts> us(n);
      xs[0] = state_boxplus(x_lin_[0], d0);  // initial condition is hard
      for (int k = 1; k <= n; ++k) xs[k] = state_boxplus(x_lin_[k], a * dx[k]);
      for (int k = 0; k < n; ++k)
        us[k] = (u_lin_[k] + a * qp.x.segment<4>(4 * k))
                    .cwiseMax(prob_.u_min)
                    .cwiseMin(prob_.u_max);
      double penalty = 0.0;
      for (int k = 0; k < n; ++k)
        penalty +=
            state_boxminus(integrate_node(xs[k], us[k], prob_), xs[k + 1]).lpNorm<1>();
      return build_cost(xs, us, window, prob_) + merit_rho_ * penalty;
    };
    const double merit0 = merit(0.0);
    double best_alpha = 1.0, best_merit = merit(1.0);
    for (double a : {0.5, 0.25, 0.125, 0.0625}) {
      if (best_merit < merit0) break;
      const double ma = merit(a);
      if (ma < best_merit) {
        best_merit = ma;
        best_alpha = a;
      }
    }
    alpha = best_alpha;
  }

  x_lin_[0] = state_boxplus(x_lin_[0], d0);
  for (int k = 1; k <= n; ++k) x_lin_[k] = state_boxplus(x_lin_[k], alpha * dx[k]);
  for (int k = 0; k < n; ++k)
    u_lin_[k] = (u_lin_[k] + alpha * qp.x.segment<4>(4 * k))
                    .cwiseMax(prob_.u_min)
                    .cwiseMin(prob_.u_max);

  const double step_inf = qp.x.size() > 0 ? alpha * qp.x.cwiseAbs().maxCoeff() : 0.0;
  return std::max({defect_inf, step_inf, qp.stationarity});
}

MpcSolution MpcSolver::solve(const QuadState& x_init, std::span<const RefSample> window) {
  const auto t_start = std::chrono::steady_clock::now();
  if (static_cast<int>(window.size()) < prob_.horizon + 1)
    throw std::invalid_argument("MpcSolver: reference window shorter than horizon+1");
  if (!x_init.finite()) throw std::invalid_argument("MpcSolver: non-finite initial state");

  auto snapshot = [&](double kkt, int iters) {
    MpcSolution sol;
    sol.x_traj = x_lin_;
    sol.u_traj = u_lin_;
    sol.kkt_residual = kkt;
    sol.sqp_iters = iters;
    sol.solve_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return sol;
  };

  if (!settings_.warm_start || !warm_) {
    cold_start(window);
  } else {
    // t_last_ tracks the warm trajectory's node epoch; it only advances by
    // whole node intervals, so sub-node control ticks reuse the trajectory.
    shift_warm_state(window[0].t);
    if (!warm_) cold_start(window);
  }

  double kkt = std::numeric_limits<double>::infinity();
  int iters = 0;
  try {
    const int max_iters = std::max(1, settings_.max_sqp_iters);
    for (iters = 0; iters < max_iters; ++iters) {
      kkt = sqp_iteration(x_init, window);
      if (kkt < settings_.kkt_tol) {
        ++iters;
        break;
      }
    }
  } catch (const std::exception& e) {
    warm_ = false;
    throw SolverError(std::string("MPC solve failed: ") + e.what(), snapshot(kkt, iters));
  }
  return snapshot(kkt, iters);
}

}  // namespace gpmpc
