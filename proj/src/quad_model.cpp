#include "gpmpc/quad_model.hpp"

namespace gpmpc {

Quat quat_mul(const Quat& a, const Quat& b) {
  return Quat(a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
              a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
              a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
              a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]);
}

Mat4 quat_left_matrix(const Quat& q) {
  Mat4 m;
  m << q[0], -q[1], -q[2], -q[3],
       q[1],  q[0], -q[3],  q[2],
       q[2],  q[3],  q[0], -q[1],
       q[3], -q[2],  q[1],  q[0];
  return m;
}

Mat4 quat_right_matrix(const Quat& q) {
  Mat4 m;
  m << q[0], -q[1], -q[2], -q[3],
       q[1],  q[0],  q[3], -q[2],
       q[2], -q[3],  q[0],  q[1],
       q[3],  q[2], -q[1],  q[0];
  return m;
}

Vec3 quat_rotate(const Quat& q, const Vec3& v) {
  const double w = q[0];
  const Vec3 u(q[1], q[2], q[3]);
  return (w * w - u.squaredNorm()) * v + 2.0 * u.dot(v) * u + 2.0 * w * u.cross(v);
}

Mat3 quat_to_rot_matrix(const Quat& q) {
  const double w = q[0];
  const Vec3 u(q[1], q[2], q[3]);
  return (w * w - u.squaredNorm()) * Mat3::Identity() + 2.0 * u * u.transpose() +
         2.0 * w * skew(u);
}

Quat quat_exp(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  const double half = 0.5 * angle;
  double s;
  if (angle < 1e-9) {
    s = 0.5 - angle * angle / 48.0;  // sin(a/2)/a series
  } else {
    s = std::sin(half) / angle;
  }
  return Quat(std::cos(half), s * rotvec.x(), s * rotvec.y(), s * rotvec.z());
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in;
  if (q[0] < 0.0) q = -q;
  const Vec3 u(q[1], q[2], q[3]);
  const double n = u.norm();
  const double w = q[0];
  if (n < 1e-12) return 2.0 * u / w;
  const double angle = 2.0 * std::atan2(n, w);
  return (angle / n) * u;
}

Quat quat_normalized(const Quat& q) {
  Quat out = q / q.norm();
  if (out[0] < 0.0) out = -out;
  return out;
}

Quat quat_from_rot_matrix(const Mat3& rot) {
  const Eigen::Quaterniond eq(rot);
  return quat_normalized(Quat(eq.w(), eq.x(), eq.y(), eq.z()));
}

Eigen::Matrix<double, 3, 4> quat_rotate_jac_q(const Quat& q, const Vec3& w) {
  const double qw = q[0];
  const Vec3 u(q[1], q[2], q[3]);
  Eigen::Matrix<double, 3, 4> jac;
  jac.col(0) = 2.0 * qw * w + 2.0 * u.cross(w);
  jac.rightCols<3>() = 2.0 * (-w * u.transpose() + u.dot(w) * Mat3::Identity() +
                              u * w.transpose() - qw * skew(w));
  return jac;
}

Eigen::Matrix<double, 3, 4> quat_rotate_conj_jac_q(const Quat& q, const Vec3& v) {
  const double qw = q[0];
  const Vec3 u(q[1], q[2], q[3]);
  Eigen::Matrix<double, 3, 4> jac;
  jac.col(0) = 2.0 * qw * v - 2.0 * u.cross(v);
  jac.rightCols<3>() = 2.0 * (-v * u.transpose() + u.dot(v) * Mat3::Identity() +
                              u * v.transpose() + qw * skew(v));
  return jac;
}

Eigen::Matrix<double, 3, 4> quat_log_jac(const Quat& q_in) {
  const double sign = q_in[0] < 0.0 ? -1.0 : 1.0;
  const Quat q = sign * q_in;
  const double w = q[0];
  const Vec3 u(q[1], q[2], q[3]);
  const double n = u.norm();
  const double r2 = w * w + n * n;

  Eigen::Matrix<double, 3, 4> jac;
  jac.col(0) = -2.0 * u / r2;
  if (n < 1e-7) {
    jac.rightCols<3>() =
        (2.0 / w) * Mat3::Identity() - (4.0 / (3.0 * w * w * w)) * u * u.transpose();
  } else {
    const double angle = 2.0 * std::atan2(n, w);
    jac.rightCols<3>() = (angle / n) * Mat3::Identity() +
                         (2.0 * w / r2 - angle / n) * (u * u.transpose()) / (n * n);
  }
  return sign * jac;
}

void QuadParams::validate() const {
  if (!(mass > 0.0)) throw std::invalid_argument("QuadParams: mass must be positive");
  if (!(inertia.minCoeff() > 0.0))
    throw std::invalid_argument("QuadParams: inertia must be positive");
  if (!(arm_x > 0.0 && arm_y > 0.0))
    throw std::invalid_argument("QuadParams: rotor displacements must be positive");
  if (!(torque_const > 0.0))
    throw std::invalid_argument("QuadParams: torque constant must be positive");
  if (!(max_thrust > mass * 9.81 / 4.0))
    throw std::invalid_argument("QuadParams: platform cannot hover (max_thrust too small)");
}

Eigen::Matrix<double, 13, 1> QuadState::to_vector() const {
  Eigen::Matrix<double, 13, 1> x;
  x.segment<3>(0) = p;
  x.segment<4>(3) = q;
  x.segment<3>(7) = v;
  x.segment<3>(10) = w;
  return x;
}

QuadState QuadState::from_vector(const Eigen::Matrix<double, 13, 1>& x) {
  QuadState s;
  s.p = x.segment<3>(0);
  s.q = x.segment<4>(3);
  s.v = x.segment<3>(7);
  s.w = x.segment<3>(10);
  return s;
}

bool QuadState::finite() const { return to_vector().allFinite(); }

Eigen::Matrix<double, 13, 1> StateDerivative::to_vector() const {
  Eigen::Matrix<double, 13, 1> x;
  x.segment<3>(0) = dp;
  x.segment<4>(3) = dq;
  x.segment<3>(7) = dv;
  x.segment<3>(10) = dw;
  return x;
}

bool StateDerivative::finite() const { return to_vector().allFinite(); }

BodyWrench collective_wrench(const RotorThrusts& u, const QuadParams& params) {
  BodyWrench w;
  w.thrust = Vec3(0.0, 0.0, u.sum());
  w.torque = Vec3(params.arm_y * (-u[0] - u[1] + u[2] + u[3]),
                  params.arm_x * (-u[0] + u[1] + u[2] - u[3]),
                  params.torque_const * (-u[0] + u[1] - u[2] + u[3]));
  return w;
}

Eigen::Matrix4d allocation_matrix(const QuadParams& params) {
  Eigen::Matrix4d m;
  const double dy = params.arm_y, dx = params.arm_x, ct = params.torque_const;
  m << 1.0, 1.0, 1.0, 1.0,
       -dy, -dy, dy, dy,
       -dx, dx, dx, -dx,
       -ct, ct, -ct, ct;
  return m;
}

StateDerivative f_dyn(const QuadState& x, const RotorThrusts& u, const QuadParams& params) {
  const BodyWrench wr = collective_wrench(u, params);
  StateDerivative d;
  d.dp = x.v;
  d.dq = 0.5 * quat_mul(x.q, Quat(0.0, x.w.x(), x.w.y(), x.w.z()));
  d.dv = quat_rotate(x.q, wr.thrust) / params.mass + params.gravity;
  const Vec3 Jw = params.inertia.cwiseProduct(x.w);
  d.dw = (wr.torque - x.w.cross(Jw)).cwiseQuotient(params.inertia);
  return d;
}

void f_dyn_jac(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
               Eigen::Matrix<double, 13, 13>& fx, Eigen::Matrix<double, 13, 4>& fu) {
  fx.setZero();
  fu.setZero();

  // dp = v
  fx.block<3, 3>(0, 7) = Mat3::Identity();

  // dq = 0.5 q*(0,w)
  const Quat wq(0.0, x.w.x(), x.w.y(), x.w.z());
  fx.block<4, 4>(3, 3) = 0.5 * quat_right_matrix(wq);
  fx.block<4, 3>(3, 10) = 0.5 * quat_left_matrix(x.q).rightCols<3>();

  // dv = R(q) T_B / m + g
  const BodyWrench wr = collective_wrench(u, params);
  fx.block<3, 4>(7, 3) = quat_rotate_jac_q(x.q, wr.thrust) / params.mass;
  const Vec3 thrust_dir = quat_rotate(x.q, Vec3::UnitZ()) / params.mass;
  for (int i = 0; i < 4; ++i) fu.block<3, 1>(7, i) = thrust_dir;

  // dw = J^-1 (tau - w x Jw)
  const Vec3 Jdiag = params.inertia;
  const Mat3 J = Jdiag.asDiagonal();
  const Mat3 Jinv = Jdiag.cwiseInverse().asDiagonal();
  fx.block<3, 3>(10, 10) = Jinv * (skew(Jdiag.cwiseProduct(x.w)) - skew(x.w) * J);
  fu.block<3, 4>(10, 0) = Jinv * allocation_matrix(params).bottomRows<3>();
}

QuadState rk4_step_nominal(const QuadState& x, const RotorThrusts& u, double dt,
                           const QuadParams& params) {
  return rk4_step(x, u, dt, [&](const QuadState& s, const RotorThrusts& uu) {
    return f_dyn(s, uu, params);
  });
}

}  // namespace gpmpc
