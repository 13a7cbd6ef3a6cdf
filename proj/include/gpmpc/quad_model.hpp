#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <utility>

namespace gpmpc {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Unit quaternion stored as (w, x, y, z), rotating body-frame vectors into
/// the world frame.
using Quat = Eigen::Vector4d;

/// Individual rotor thrusts [N], rotor 0..3 ordered (front-left, back-left,
/// back-right, front-right seen from above with x forward, y left).
using RotorThrusts = Eigen::Vector4d;

// ---------------------------------------------------------------------------
// Quaternion algebra
// ---------------------------------------------------------------------------

inline Quat quat_identity() { return Quat(1.0, 0.0, 0.0, 0.0); }

inline Quat quat_conjugate(const Quat& q) { return Quat(q[0], -q[1], -q[2], -q[3]); }

/// Hamilton product a * b.
Quat quat_mul(const Quat& a, const Quat& b);

/// Left multiplication matrix L(q) with q1 * q2 == L(q1) * q2.
Mat4 quat_left_matrix(const Quat& q);

/// Right multiplication matrix R(q) with q1 * q2 == R(q2) * q1.
Mat4 quat_right_matrix(const Quat& q);

/// Rotates v by q (returns q * (0,v) * conj(q)). Uses the quadratic form so
/// the expression stays smooth for slightly denormalized quaternions; for
/// unit q this is the exact rotation and preserves |v|.
Vec3 quat_rotate(const Quat& q, const Vec3& v);

/// Rotation matrix R with quat_rotate(q, v) == R * v.
Mat3 quat_to_rot_matrix(const Quat& q);

/// Exponential map: rotation vector (axis * angle, radians) to quaternion.
Quat quat_exp(const Vec3& rotvec);

/// Logarithm map, inverse of quat_exp. Sign-corrected so the result is the
/// shortest rotation regardless of the quaternion's hemisphere.
Vec3 quat_log(const Quat& q);

/// Normalizes and canonicalizes (w >= 0) a quaternion.
Quat quat_normalized(const Quat& q);

/// Canonical (w >= 0) quaternion of a rotation matrix.
Quat quat_from_rot_matrix(const Mat3& rot);

/// d(quat_rotate(q, w))/dq for fixed w, 3x4 in (w,x,y,z) column order.
Eigen::Matrix<double, 3, 4> quat_rotate_jac_q(const Quat& q, const Vec3& w);

/// d(quat_rotate(conj(q), v))/dq for fixed v.
Eigen::Matrix<double, 3, 4> quat_rotate_conj_jac_q(const Quat& q, const Vec3& v);

/// Ambient-space Jacobian of quat_log at q (3x4), including the hemisphere
/// sign correction.
Eigen::Matrix<double, 3, 4> quat_log_jac(const Quat& q);

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

// ---------------------------------------------------------------------------
// Rigid-body model
// ---------------------------------------------------------------------------

/**
 * Physical parameters of the quadrotor platform. The default set models a
 * 0.8 kg racing-class quad with thrust-to-weight 5:1; inertia and geometry
 * are plausible values for that scale and are meant to be overridden from
 * the experiment config.
 */
struct QuadParams {
  double mass = 0.8;                      // [kg]
  Vec3 inertia{0.0015, 0.0015, 0.0027};   // diagonal of J [kg m^2]
  double arm_x = 0.125;                   // rotor displacement d_x [m]
  double arm_y = 0.125;                   // rotor displacement d_y [m]
  double torque_const = 0.016;            // rotor drag torque constant c_tau [m]
  double max_thrust = 9.81;               // per-rotor limit [N]
  Vec3 gravity{0.0, 0.0, -9.81};          // [m/s^2]

  double hover_thrust() const { return mass * 9.81 / 4.0; }
  void validate() const;
};

/// 13-dimensional rigid-body state.
struct QuadState {
  Vec3 p{Vec3::Zero()};       // position, world frame [m]
  Quat q{quat_identity()};    // attitude body->world
  Vec3 v{Vec3::Zero()};       // velocity, world frame [m/s]
  Vec3 w{Vec3::Zero()};       // body rates [rad/s]

  Eigen::Matrix<double, 13, 1> to_vector() const;
  static QuadState from_vector(const Eigen::Matrix<double, 13, 1>& x);

  /// Velocity expressed in the body frame.
  Vec3 body_velocity() const { return quat_rotate(quat_conjugate(q), v); }

  bool finite() const;
};

struct StateDerivative {
  Vec3 dp{Vec3::Zero()};
  Quat dq{Quat::Zero()};
  Vec3 dv{Vec3::Zero()};
  Vec3 dw{Vec3::Zero()};

  Eigen::Matrix<double, 13, 1> to_vector() const;
  bool finite() const;
};

struct BodyWrench {
  Vec3 thrust;   // collective thrust, body frame [N]
  Vec3 torque;   // body torque [N m]
};

/// Maps the four rotor thrusts to collective thrust (0, 0, sum T_i) and body
/// torque through the rotor geometry.
BodyWrench collective_wrench(const RotorThrusts& u, const QuadParams& params);

/// Thrust/torque allocation matrix: [sum; tau] = M * u.
Eigen::Matrix4d allocation_matrix(const QuadParams& params);

/// Nominal continuous-time rigid-body dynamics.
StateDerivative f_dyn(const QuadState& x, const RotorThrusts& u, const QuadParams& params);

/// Analytic Jacobians of f_dyn in the ambient 13-dim coordinates
/// (p, q, v, w) x (T0..T3).
void f_dyn_jac(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
               Eigen::Matrix<double, 13, 13>& fx, Eigen::Matrix<double, 13, 4>& fu);

/// Classical RK4 update for a generic vector ODE; `f` maps state to
/// derivative. Shared kernel for the quadrotor step and the plant simulator.
template <typename VecT, typename F>
VecT rk4_integrate(const VecT& x, double dt, F&& f) {
  const VecT k1 = f(x);
  const VecT k2 = f(VecT(x + 0.5 * dt * k1));
  const VecT k3 = f(VecT(x + 0.5 * dt * k2));
  const VecT k4 = f(VecT(x + dt * k3));
  return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

/**
 * One RK4 step of the quadrotor state under zero-order-held input. `dyn` is
 * any state-derivative function (nominal, drag-augmented or GP-corrected).
 * The quaternion is renormalized and canonicalized after the update.
 * Throws std::runtime_error when the derivative turns non-finite.
 */
template <typename Dyn>
QuadState rk4_step(const QuadState& x, const RotorThrusts& u, double dt, Dyn&& dyn) {
  auto f = [&](const Eigen::Matrix<double, 13, 1>& xv) -> Eigen::Matrix<double, 13, 1> {
    const StateDerivative d = dyn(QuadState::from_vector(xv), u);
    if (!d.finite()) throw std::runtime_error("rk4_step: non-finite state derivative");
    return d.to_vector();
  };
  QuadState out = QuadState::from_vector(rk4_integrate(x.to_vector(), dt, f));
  out.q = quat_normalized(out.q);
  return out;
}

/// One nominal-model RK4 step.
QuadState rk4_step_nominal(const QuadState& x, const RotorThrusts& u, double dt,
                           const QuadParams& params);

}  // namespace gpmpc
