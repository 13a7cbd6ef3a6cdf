#include "gpmpc/sim.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace gpmpc {

void SimConfig::validate() const {
  if (!(sim_dt > 0.0)) throw std::invalid_argument("SimConfig: sim_dt must be positive");
  if (drag.lin.minCoeff() < 0.0 || drag.quad.minCoeff() < 0.0 || drag.quad_y_extra < 0.0)
    throw std::invalid_argument("SimConfig: drag coefficients must be nonnegative");
  if (noise.force_std < 0.0 || noise.torque_std < 0.0 || noise.motor_std < 0.0 ||
      noise.motor_bias_scale < 0.0)
    throw std::invalid_argument("SimConfig: noise levels must be nonnegative");
}

bool SimConfig::disturbance_free() const {
  return drag.lin.isZero() && drag.quad.isZero() && drag.quad_y_extra == 0.0 &&
         noise.force_std == 0.0 && noise.torque_std == 0.0 && noise.motor_std == 0.0 &&
         noise.motor_bias_scale == 0.0;
}

SimWorld SimWorld::create(const SimConfig& cfg, const QuadParams& params, const QuadState& x0,
                          std::uint64_t seed) {
  cfg.validate();
  params.validate();
  SimWorld w;
  w.x = x0;
  w.cfg = cfg;
  w.params = params;
  w.rng.seed(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int i = 0; i < 4; ++i) w.motor_bias[i] = 1.0 + cfg.noise.motor_bias_scale * n(w.rng);
  return w;
}

StateDerivative plant_derivative(const QuadState& x, const RotorThrusts& u_applied,
                                 const SimConfig& cfg, const QuadParams& params,
                                 const Vec3& force_noise, const Vec3& torque_noise) {
  StateDerivative d = f_dyn(x, u_applied, params);
  const Vec3 v_b = x.body_velocity();
  Vec3 quad = cfg.drag.quad;
  quad.y() += cfg.drag.quad_y_extra;
  const Vec3 a_drag =
      -cfg.drag.lin.cwiseProduct(v_b) - quad.cwiseProduct(v_b.cwiseProduct(v_b.cwiseAbs()));
  d.dv += quat_rotate(x.q, a_drag) + force_noise / params.mass;
  d.dw += torque_noise.cwiseQuotient(params.inertia);
  return d;
}

void step_sim(SimWorld& world, const RotorThrusts& u_cmd, double duration) {
  const long n = std::lround(duration / world.cfg.sim_dt);
  if (std::abs(duration - n * world.cfg.sim_dt) > 1e-12 || n < 0)
    throw std::invalid_argument("step_sim: duration must be a multiple of sim_dt");
  std::normal_distribution<double> nrm(0.0, 1.0);
  for (long k = 0; k < n; ++k) {
    RotorThrusts u = u_cmd.cwiseProduct(world.motor_bias);
    for (int i = 0; i < 4; ++i) u[i] += world.cfg.noise.motor_std * nrm(world.rng);
    u = u.cwiseMax(0.0).cwiseMin(world.params.max_thrust);
    Vec3 fn, tn;
    for (int i = 0; i < 3; ++i) fn[i] = world.cfg.noise.force_std * nrm(world.rng);
    for (int i = 0; i < 3; ++i) tn[i] = world.cfg.noise.torque_std * nrm(world.rng);
    world.x = rk4_step(world.x, u, world.cfg.sim_dt,
                       [&](const QuadState& s, const RotorThrusts& uu) {
                         return plant_derivative(s, uu, world.cfg, world.params, fn, tn);
                       });
    world.t += world.cfg.sim_dt;
  }
}

RolloutResult run_closed_loop(const ReferenceTrajectory& traj, const MpcProblem& prob,
                              const SolverSettings& settings, const SimConfig& sim_cfg,
                              const RolloutOptions& opt) {
  sim_cfg.validate();
  if (traj.samples.empty()) throw std::invalid_argument("run_closed_loop: empty trajectory");
  const long sub = std::lround(opt.control_dt / sim_cfg.sim_dt);
  if (std::abs(opt.control_dt - sub * sim_cfg.sim_dt) > 1e-12 || sub < 1)
    throw std::invalid_argument("run_closed_loop: control_dt must be a multiple of sim_dt");

  RolloutResult result;
  SimWorld world = SimWorld::create(sim_cfg, prob.params, traj.samples.front().x, opt.seed);
  MpcSolver solver(prob, settings);

  const long n_ticks = std::lround(traj.duration() / opt.control_dt);
  result.log.reserve(n_ticks);
  result.ticks.reserve(n_ticks);

  for (long k = 0; k < n_ticks; ++k) {
    const double t = k * opt.control_dt;
    const auto window = reference_window(traj, t, prob.horizon, prob.node_dt);

    TickTelemetry tick;
    tick.t = t;
    tick.speed = world.x.v.norm();
    tick.pos_err = (world.x.p - window[0].x.p).norm();
    result.max_speed = std::max(result.max_speed, tick.speed);

    RotorThrusts u_cmd;
    try {
      const auto t0 = std::chrono::steady_clock::now();
      const MpcSolution sol = solver.solve(world.x, window);
      tick.solve_ms =
          1e3 * std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      tick.kkt = sol.kkt_residual;
      tick.sqp_iters = sol.sqp_iters;
      u_cmd = sol.u_traj[0];
    } catch (const SolverError& e) {
      result.crashed = true;
      result.crash_reason = e.what();
      break;
    }

    FlightLogRecord rec;
    rec.t = t;
    rec.x = world.x;
    rec.u = u_cmd;
    rec.dt = opt.control_dt;
    rec.v_pred_next = rk4_step_nominal(world.x, u_cmd, opt.control_dt, prob.params).v;
    result.log.push_back(rec);
    result.ticks.push_back(tick);

    step_sim(world, u_cmd, opt.control_dt);

    if (!world.x.finite()) {
      result.crashed = true;
      result.crash_reason = "non-finite plant state";
      break;
    }
    if (tick.pos_err > opt.crash_pos_tol) {
      result.crashed = true;
      result.crash_reason = "tracking error exceeded " + std::to_string(opt.crash_pos_tol) +
                            " m at t=" + std::to_string(t);
      break;
    }
  }

  double sq = 0.0;
  std::vector<double> times;
  times.reserve(result.ticks.size());
  for (const auto& tick : result.ticks) {
    sq += tick.pos_err * tick.pos_err;
    times.push_back(tick.solve_ms);
  }
  result.rmse = result.ticks.empty() ? 0.0 : std::sqrt(sq / result.ticks.size());
  if (!times.empty()) {
    result.mean_solve_ms =
        std::accumulate(times.begin(), times.end(), 0.0) / static_cast<double>(times.size());
    std::sort(times.begin(), times.end());
    result.p95_solve_ms = times[static_cast<size_t>(0.95 * (times.size() - 1))];
  }
  return result;
}

std::vector<SpeedBin> speed_binned_rmse(const RolloutResult& result,
                                        std::span<const double> edges) {
  if (edges.size() < 2) throw std::invalid_argument("speed_binned_rmse: need >= 2 edges");
  std::vector<SpeedBin> bins;
  for (size_t b = 0; b + 1 < edges.size(); ++b) {
    SpeedBin bin;
    bin.lo = edges[b];
    bin.hi = edges[b + 1];
    double sq = 0.0;
    for (const auto& tick : result.ticks) {
      if (tick.speed >= bin.lo && tick.speed < bin.hi) {
        sq += tick.pos_err * tick.pos_err;
        ++bin.count;
      }
    }
    if (bin.count > 0) {
      bin.rmse = std::sqrt(sq / static_cast<double>(bin.count));
      bins.push_back(bin);
    }
  }
  return bins;
}

double position_rmse(std::span<const Vec3> actual, std::span<const Vec3> reference) {
  if (actual.size() != reference.size() || actual.empty())
    throw std::invalid_argument("position_rmse: size mismatch or empty");
  double sq = 0.0;
  for (size_t i = 0; i < actual.size(); ++i) sq += (actual[i] - reference[i]).squaredNorm();
  return std::sqrt(sq / static_cast<double>(actual.size()));
}

}  // namespace gpmpc
