#include "gpmpc/trajectory.hpp"

#include "gpmpc/csv.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <random>

namespace gpmpc {

namespace {

// 9th-order smoothstep: S(0)=0, S(1)=1, first four derivatives vanish at both
// ends, so a speed profile built from it is C^4 across the ramp corners.
double smoothstep(double x) {
  const double x5 = x * x * x * x * x;
  return x5 * (126.0 + x * (-420.0 + x * (540.0 + x * (-315.0 + x * 70.0))));
}
double smoothstep_d1(double x) {
  const double a = x * (1.0 - x);
  return 630.0 * a * a * a * a;
}
double smoothstep_d2(double x) {
  const double x3 = x * x * x;
  return x3 * (2520.0 + x * (-12600.0 + x * (22680.0 + x * (-17640.0 + x * 5040.0))));
}
double smoothstep_d3(double x) {
  const double x2 = x * x;
  return x2 * (7560.0 + x * (-50400.0 + x * (113400.0 + x * (-105840.0 + x * 35280.0))));
}
// integral of smoothstep from 0 to x; equals 1/2 at x=1
double smoothstep_int(double x) {
  const double x6 = x * x * x * x * x * x;
  return x6 * (21.0 + x * (-60.0 + x * (67.5 + x * (-35.0 + x * 7.0))));
}

// Trapezoid-like phase warp with smooth ramps: phase rate goes
// 0 -> rate_peak -> 0 over [0, duration] with ramps of length t_ramp.
struct PhaseWarp {
  double rate_peak = 1.0;
  double t_ramp = 1.0;
  double duration = 10.0;

  // phi(t) and its first four time derivatives
  void eval(double t, double& phi, std::array<double, 4>& w) const {
    t = std::clamp(t, 0.0, duration);
    const double r = rate_peak, tr = t_ramp;
    if (t < tr) {
      const double x = t / tr;
      phi = r * tr * smoothstep_int(x);
      w = {r * smoothstep(x), r * smoothstep_d1(x) / tr, r * smoothstep_d2(x) / (tr * tr),
           r * smoothstep_d3(x) / (tr * tr * tr)};
    } else if (t <= duration - tr) {
      phi = r * (0.5 * tr + (t - tr));
      w = {r, 0.0, 0.0, 0.0};
    } else {
      const double x = (duration - t) / tr;
      const double phi_end = r * (duration - tr);
      phi = phi_end - r * tr * smoothstep_int(x);
      w = {r * smoothstep(x), -r * smoothstep_d1(x) / tr, r * smoothstep_d2(x) / (tr * tr),
           -r * smoothstep_d3(x) / (tr * tr * tr)};
    }
  }
};

// Chain rule up to 4th order for p(phi(t)) given path derivatives g[0..4]
// in phi and warp derivatives w[0..3].
FlatOutput compose_flat(const std::array<Vec3, 5>& g, double /*phi*/,
                        const std::array<double, 4>& w) {
  FlatOutput f;
  const double w1 = w[0], w2 = w[1], w3 = w[2], w4 = w[3];
  f.p = g[0];
  f.v = g[1] * w1;
  f.a = g[2] * (w1 * w1) + g[1] * w2;
  f.j = g[3] * (w1 * w1 * w1) + 3.0 * g[2] * (w1 * w2) + g[1] * w3;
  f.s = g[4] * (w1 * w1 * w1 * w1) + 6.0 * g[3] * (w1 * w1 * w2) + 3.0 * g[2] * (w2 * w2) +
        4.0 * g[2] * (w1 * w3) + g[1] * w4;
  return f;
}

std::array<Vec3, 5> circle_path(double phi, double radius, double z0) {
  std::array<Vec3, 5> g;
  for (int n = 0; n < 5; ++n) {
    const double ph = phi + n * M_PI_2;
    g[n] = Vec3(radius * std::cos(ph), radius * std::sin(ph), n == 0 ? z0 : 0.0);
  }
  return g;
}

std::array<Vec3, 5> lemniscate_path(double phi, double amplitude, double z0) {
  // x = A cos(k phi), y = (A/2) sin(2k phi) with k = sqrt(2)
  const double k = std::sqrt(2.0);
  std::array<Vec3, 5> g;
  double kx = 1.0, ky = 1.0;
  for (int n = 0; n < 5; ++n) {
    g[n] = Vec3(amplitude * kx * std::cos(k * phi + n * M_PI_2),
                0.5 * amplitude * ky * std::sin(2.0 * k * phi + n * M_PI_2),
                n == 0 ? z0 : 0.0);
    kx *= k;
    ky *= 2.0 * k;
  }
  return g;
}

double max_path_speed_per_phase(const std::function<std::array<Vec3, 5>(double)>& path,
                                double period) {
  double best = 0.0;
  for (int i = 0; i < 4096; ++i)
    best = std::max(best, path(period * i / 4096.0)[1].norm());
  return best;
}

}  // namespace

void TrajectorySpec::validate() const {
  if (!(v_peak > 0.0)) throw TrajectoryError("trajectory spec: v_peak must be positive");
  if (!(scale > 0.0)) throw TrajectoryError("trajectory spec: scale must be positive");
  if (!(duration > 0.0)) throw TrajectoryError("trajectory spec: duration must be positive");
  if (!(sample_dt > 0.0)) throw TrajectoryError("trajectory spec: sample_dt must be positive");
  if (!(ramp_fraction > 0.0 && ramp_fraction <= 0.45))
    throw TrajectoryError("trajectory spec: ramp_fraction must be in (0, 0.45]");
  if (random.n_waypoints < 2) throw TrajectoryError("trajectory spec: need >= 2 waypoints");
}

void flat_attitude(const FlatOutput& f, const Vec3& gravity, double yaw, Quat& q, Vec3& omega,
                   double& thrust_acc) {
  const Vec3 alpha = f.a - gravity;
  thrust_acc = alpha.norm();
  if (thrust_acc < 1e-3) {
    // free fall: thrust direction undefined, hold a level attitude
    q = quat_exp(Vec3(0.0, 0.0, yaw));
    omega = Vec3::Zero();
    return;
  }
  const Vec3 z_b = alpha / thrust_acc;
  Vec3 x_c(std::cos(yaw), std::sin(yaw), 0.0);
  Vec3 cr = z_b.cross(x_c);
  if (cr.norm() < 1e-6) {
    x_c = Vec3(-std::sin(yaw), std::cos(yaw), 0.0);  // thrust along the heading: degenerate
    cr = z_b.cross(x_c);
  }
  const double n = cr.norm();
  const Vec3 y_b = cr / n;
  const Vec3 x_b = y_b.cross(z_b);
  Mat3 rot;
  rot.col(0) = x_b;
  rot.col(1) = y_b;
  rot.col(2) = z_b;
  q = quat_from_rot_matrix(rot);

  const double c_dot = z_b.dot(f.j);
  const Vec3 zb_dot = (f.j - c_dot * z_b) / thrust_acc;
  omega = Vec3(-zb_dot.dot(y_b), zb_dot.dot(x_b), -(zb_dot.cross(x_c)).dot(x_b) / n);
}

RefSample flat_reference(const FlatOutput& f, const Vec3& omega_dot, double t,
                         const QuadParams& params, double yaw) {
  RefSample s;
  s.t = t;
  double thrust_acc;
  flat_attitude(f, params.gravity, yaw, s.x.q, s.x.w, thrust_acc);
  s.x.p = f.p;
  s.x.v = f.v;
  const Vec3 torque = params.inertia.cwiseProduct(omega_dot) +
                      s.x.w.cross(params.inertia.cwiseProduct(s.x.w));
  Vec4 wrench;
  wrench << params.mass * thrust_acc, torque;
  s.u = allocation_matrix(params).lu().solve(wrench);
  return s;
}

namespace {

struct BoundsReport {
  double worst_violation = 0.0;  // [N] outside [0, max_thrust]
  double worst_time = 0.0;
};

// Samples a flat path, filling angular accelerations by differencing the
// analytic body-rate signal. Input-bound violations either throw or land in
// `report`.
ReferenceTrajectory sample_path(const std::function<FlatOutput(double)>& path, double duration,
                                double dt, const QuadParams& params,
                                BoundsReport* report = nullptr, double yaw = 0.0) {
  ReferenceTrajectory traj;
  traj.sample_dt = dt;
  const int n = static_cast<int>(std::round(duration / dt));
  traj.samples.reserve(n + 1);

  const double delta = 1e-4;
  auto omega_at = [&](double t) {
    Quat q;
    Vec3 w;
    double c;
    flat_attitude(path(std::clamp(t, 0.0, duration)), params.gravity, yaw, q, w, c);
    return w;
  };

  double worst_u = 0.0, worst_t = 0.0;
  for (int k = 0; k <= n; ++k) {
    const double t = k * dt;
    const double lo = std::max(t - delta, 0.0), hi = std::min(t + delta, duration);
    const Vec3 omega_dot = (omega_at(hi) - omega_at(lo)) / (hi - lo);
    RefSample s = flat_reference(path(t), omega_dot, t, params, yaw);
    const double viol = std::max(-s.u.minCoeff(), s.u.maxCoeff() - params.max_thrust);
    if (viol > worst_u) {
      worst_u = viol;
      worst_t = t;
    }
    s.u = s.u.cwiseMax(0.0).cwiseMin(params.max_thrust);
    traj.samples.push_back(s);
  }
  if (report) {
    report->worst_violation = worst_u;
    report->worst_time = worst_t;
  } else if (worst_u > 1e-6) {
    throw TrajectoryError(
        "trajectory demands rotor thrusts outside [0, " + std::to_string(params.max_thrust) +
        "] N by " + std::to_string(worst_u) + " N; reduce v_peak or enlarge the path");
  }
  return traj;
}

ReferenceTrajectory analytic_trajectory(
    const TrajectorySpec& spec, const QuadParams& params,
    const std::function<std::array<Vec3, 5>(double)>& path, double period) {
  const double peak_gain = max_path_speed_per_phase(path, period);
  PhaseWarp warp{spec.v_peak / peak_gain, spec.ramp_fraction * spec.duration, spec.duration};
  auto flat = [&](double t) {
    double phi;
    std::array<double, 4> w;
    warp.eval(t, phi, w);
    return compose_flat(path(phi), phi, w);
  };
  return sample_path(flat, spec.duration, spec.sample_dt, params);
}

}  // namespace

ReferenceTrajectory circle(const TrajectorySpec& spec, const QuadParams& params) {
  spec.validate();
  return analytic_trajectory(
      spec, params, [&](double phi) { return circle_path(phi, spec.scale, spec.z0); },
      2.0 * M_PI);
}

ReferenceTrajectory lemniscate(const TrajectorySpec& spec, const QuadParams& params) {
  spec.validate();
  return analytic_trajectory(
      spec, params, [&](double phi) { return lemniscate_path(phi, spec.scale, spec.z0); },
      M_PI * std::sqrt(2.0));
}

namespace {

// One degree-11 polynomial segment per axis, pinned position/velocity and
// zero derivatives of order 2..5 at both ends, so joints are C^5 and the
// body-rate references stay twice differentiable.
struct PolySegment {
  static constexpr int kOrder = 12;  // coefficient count
  double tau = 1.0;
  std::array<Eigen::Matrix<double, kOrder, 1>, 3> coeffs;

  static PolySegment build(const Vec3& p0, const Vec3& v0, const Vec3& p1, const Vec3& v1,
                           double tau) {
    PolySegment seg;
    seg.tau = tau;
    constexpr int n_end = kOrder / 2;
    for (int axis = 0; axis < 3; ++axis) {
      Eigen::Matrix<double, kOrder, 1>& c = seg.coeffs[axis];
      c.setZero();
      c[0] = p0[axis];
      c[1] = v0[axis] * tau;
      // c2..c5 = 0 (zero acc/jerk/snap/crackle at the start)
      Eigen::Matrix<double, n_end, n_end> a;
      Eigen::Matrix<double, n_end, 1> rhs;
      double targets[n_end] = {p1[axis], v1[axis] * tau, 0.0, 0.0, 0.0, 0.0};
      for (int m = 0; m < n_end; ++m) {
        for (int j = 0; j < n_end; ++j) {
          const int k = n_end + j;
          double f = 1.0;
          for (int i = 0; i < m; ++i) f *= (k - i);
          a(m, j) = f;
        }
        double partial = 0.0;
        for (int k = m; k < n_end; ++k) {
          double f = 1.0;
          for (int i = 0; i < m; ++i) f *= (k - i);
          partial += f * c[k];
        }
        rhs[m] = targets[m] - partial;
      }
      c.segment<n_end>(n_end) = a.fullPivLu().solve(rhs).eval();
    }
    return seg;
  }

  void eval(double t, FlatOutput& f) const {
    const double s = std::clamp(t / tau, 0.0, 1.0);
    Vec3 out[5];
    for (int m = 0; m < 5; ++m) out[m].setZero();
    for (int axis = 0; axis < 3; ++axis) {
      for (int m = 0; m < 5; ++m) {
        double acc = 0.0;
        double sp = 1.0;
        for (int k = m; k < kOrder; ++k) {
          double fct = 1.0;
          for (int i = 0; i < m; ++i) fct *= (k - i);
          acc += coeffs[axis][k] * fct * sp;
          sp *= s;
        }
        out[m][axis] = acc / std::pow(tau, m);
      }
    }
    f.p = out[0];
    f.v = out[1];
    f.a = out[2];
    f.j = out[3];
    f.s = out[4];
  }
};

struct PiecewisePoly {
  std::vector<PolySegment> segments;
  std::vector<double> starts;  // cumulative start times
  double total = 0.0;

  FlatOutput eval(double t) const {
    t = std::clamp(t, 0.0, total);
    size_t i = 0;
    while (i + 1 < segments.size() && t >= starts[i + 1]) ++i;
    FlatOutput f;
    segments[i].eval(t - starts[i], f);
    return f;
  }
};

}  // namespace

FlatPathHandle random_polynomial_path(const TrajectorySpec& spec, const QuadParams& params) {
  spec.validate();
  const RandomPolyParams& rp = spec.random;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> ux(rp.box_min.x(), rp.box_max.x());
  std::uniform_real_distribution<double> uy(rp.box_min.y(), rp.box_max.y());
  std::uniform_real_distribution<double> uz01(0.0, 1.0);

  // Waypoints alternate between the lower and upper z band so vertical speeds
  // get exercised as hard as the lateral ones.
  const double z_span = rp.box_max.z() - rp.box_min.z();
  std::vector<Vec3> wp(rp.n_waypoints);
  for (int i = 0; i < rp.n_waypoints; ++i) {
    const double band = 0.4 * z_span * uz01(rng);
    const double z = (i % 2 == 0) ? rp.box_min.z() + band : rp.box_max.z() - band;
    wp[i] = Vec3(ux(rng), uy(rng), z);
  }
  // a per-trajectory heading diversifies which body axis sees the airspeed
  const double yaw = 2.0 * M_PI * (uz01(rng) - 0.5);

  const int n_seg = rp.n_waypoints - 1;
  // heterogeneous segment speeds, shaped toward the low end so the visited
  // velocities cover the whole range with most time spent at moderate speed
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<double> tau(n_seg);
  for (int i = 0; i < n_seg; ++i) {
    const double u = u01(rng);
    const double target = rp.segment_speed * (0.18 + 0.82 * u * u);
    tau[i] = std::max((wp[i + 1] - wp[i]).norm() / target, rp.min_segment_time);
    if (i == 0 || i == n_seg - 1) tau[i] *= 1.3;  // gentler start and finish
  }

  const int max_stretch_iters = 60;
  for (int iter = 0;; ++iter) {
    // Catmull-Rom style waypoint velocities, zero at the ends.
    std::vector<Vec3> vel(rp.n_waypoints, Vec3::Zero());
    for (int i = 1; i < rp.n_waypoints - 1; ++i) {
      vel[i] = (wp[i + 1] - wp[i - 1]) / (tau[i - 1] + tau[i]);
      vel[i] = vel[i].cwiseMax(-0.8 * rp.axis_speed_cap).cwiseMin(0.8 * rp.axis_speed_cap);
    }

    PiecewisePoly poly;
    poly.starts.resize(n_seg);
    double t0 = 0.0;
    for (int i = 0; i < n_seg; ++i) {
      poly.starts[i] = t0;
      poly.segments.push_back(PolySegment::build(wp[i], vel[i], wp[i + 1], vel[i + 1], tau[i]));
      t0 += tau[i];
    }
    poly.total = t0;

    auto segment_of = [&](double t) {
      int i = 0;
      while (i + 1 < n_seg && t >= poly.starts[i + 1]) ++i;
      return i;
    };

    // Feasibility scan with margins: per-axis speed cap, thrust window and a
    // minimum collective so the attitude stays well defined. Only offending
    // segments get stretched, the rest keep their aggressiveness.
    std::vector<bool> stretch(n_seg, false);
    bool ok = true;
    for (double t = 0.0; t <= poly.total; t += 0.02) {
      const FlatOutput f = poly.eval(t);
      bool bad = f.v.cwiseAbs().maxCoeff() > 0.98 * rp.axis_speed_cap;
      Quat q;
      Vec3 w;
      double c;
      flat_attitude(f, params.gravity, yaw, q, w, c);
      bad = bad || c < 1.2 || params.mass * c / 4.0 > 0.72 * params.max_thrust;
      if (bad) {
        ok = false;
        stretch[segment_of(t)] = true;
      }
    }
    if (ok) {
      auto flat = [poly](double t) { return poly.eval(t); };
      BoundsReport report;
      sample_path(flat, poly.total, spec.sample_dt, params, &report, yaw);
      if (report.worst_violation <= 1e-6) {
        FlatPathHandle handle;
        handle.eval = flat;
        handle.joint_times = poly.starts;
        handle.joint_times.push_back(poly.total);
        handle.duration = poly.total;
        handle.yaw = yaw;
        return handle;
      }
      // torque allocation pushed a rotor out of range somewhere
      stretch[segment_of(report.worst_time)] = true;
    }
    if (iter >= max_stretch_iters)
      throw TrajectoryError("random_polynomial: could not reach a feasible trajectory");
    for (int i = 0; i < n_seg; ++i)
      if (stretch[i]) tau[i] *= 1.12;
  }
}

ReferenceTrajectory random_polynomial(const TrajectorySpec& spec, const QuadParams& params) {
  const FlatPathHandle handle = random_polynomial_path(spec, params);
  return sample_path(handle.eval, handle.duration, spec.sample_dt, params, nullptr, handle.yaw);
}

ReferenceTrajectory generate_trajectory(const TrajectorySpec& spec, const QuadParams& params) {
  switch (spec.kind) {
    case TrajectoryKind::Circle:
      return circle(spec, params);
    case TrajectoryKind::Lemniscate:
      return lemniscate(spec, params);
    case TrajectoryKind::RandomPoly:
      return random_polynomial(spec, params);
  }
  throw TrajectoryError("unknown trajectory kind");
}

std::vector<RefSample> reference_window(const ReferenceTrajectory& traj, double t, int n,
                                        double node_dt) {
  if (traj.samples.empty()) throw TrajectoryError("reference_window: empty trajectory");
  const double stride_f = node_dt / traj.sample_dt;
  const int stride = static_cast<int>(std::round(stride_f));
  if (stride < 1 || std::abs(stride_f - stride) > 1e-9)
    throw std::invalid_argument("reference_window: node_dt must be a multiple of sample_dt");
  const long base = std::lround(t / traj.sample_dt);
  std::vector<RefSample> window;
  window.reserve(n + 1);
  const long last = static_cast<long>(traj.samples.size()) - 1;
  for (int j = 0; j <= n; ++j) {
    const long idx = std::min(std::max(base + static_cast<long>(j) * stride, 0L), last);
    RefSample s = traj.samples[static_cast<size_t>(idx)];
    s.t = t + j * node_dt;  // held samples keep advancing in time
    window.push_back(s);
  }
  return window;
}

static const char* kTrajHeader = "t,px,py,pz,qw,qx,qy,qz,vx,vy,vz,wx,wy,wz,T0,T1,T2,T3";

void save_trajectory_csv(const ReferenceTrajectory& traj, const std::string& path) {
  CsvWriter w(path);
  w.header(kTrajHeader);
  for (const auto& s : traj.samples)
    w.row({s.t, s.x.p.x(), s.x.p.y(), s.x.p.z(), s.x.q[0], s.x.q[1], s.x.q[2], s.x.q[3],
           s.x.v.x(), s.x.v.y(), s.x.v.z(), s.x.w.x(), s.x.w.y(), s.x.w.z(), s.u[0], s.u[1],
           s.u[2], s.u[3]});
}

ReferenceTrajectory load_trajectory_csv(const std::string& path) {
  ReferenceTrajectory traj;
  read_csv(path, kTrajHeader, [&](int lineno, const std::vector<std::string_view>& f) {
    const std::string ctx = path + ":" + std::to_string(lineno);
    if (f.size() != 18)
      throw ParseError(ctx + ": expected 18 fields, got " + std::to_string(f.size()));
    RefSample s;
    s.t = parse_double(f[0], ctx);
    s.x.p = Vec3(parse_double(f[1], ctx), parse_double(f[2], ctx), parse_double(f[3], ctx));
    s.x.q = Quat(parse_double(f[4], ctx), parse_double(f[5], ctx), parse_double(f[6], ctx),
                 parse_double(f[7], ctx));
    s.x.v = Vec3(parse_double(f[8], ctx), parse_double(f[9], ctx), parse_double(f[10], ctx));
    s.x.w = Vec3(parse_double(f[11], ctx), parse_double(f[12], ctx), parse_double(f[13], ctx));
    s.u = RotorThrusts(parse_double(f[14], ctx), parse_double(f[15], ctx),
                       parse_double(f[16], ctx), parse_double(f[17], ctx));
    traj.samples.push_back(s);
  });
  if (traj.samples.size() >= 2) traj.sample_dt = traj.samples[1].t - traj.samples[0].t;
  return traj;
}

}  // namespace gpmpc
