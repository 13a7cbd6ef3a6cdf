#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpmpc/sim.hpp"

using namespace gpmpc;

namespace {

MpcProblem default_problem() {
  MpcProblem p;
  p.horizon = 20;
  p.node_dt = 0.05;
  p.Q = MpcProblem::diagonal_weights(100.0, 5.0, 4.0, 0.1);
  p.R = 0.25 * Eigen::Matrix4d::Identity();
  p.u_max = p.params.max_thrust;
  p.mode = NominalMode{};
  return p;
}

TrajectorySpec short_circle(double v) {
  TrajectorySpec s;
  s.kind = TrajectoryKind::Circle;
  s.v_peak = v;
  s.scale = 5.0;
  s.duration = 8.0;
  return s;
}

}  // namespace

TEST_CASE("plant equals the nominal model when drag and noise vanish") {
  QuadParams params;
  SimConfig cfg;
  QuadState x;
  x.v = Vec3(3.0, -1.0, 2.0);
  x.q = quat_exp(Vec3(0.3, 0.2, 0.5));
  x.w = Vec3(0.5, -0.2, 0.1);
  const RotorThrusts u = RotorThrusts::Constant(2.2);
  const auto d = plant_derivative(x, u, cfg, params, Vec3::Zero(), Vec3::Zero());
  const auto d0 = f_dyn(x, u, params);
  CHECK((d.to_vector() - d0.to_vector()).norm() == 0.0);
}

TEST_CASE("linear rotor drag decelerates level flight as configured") {
  QuadParams params;
  SimConfig cfg;
  cfg.drag.lin = Vec3::Constant(0.3);
  QuadState x;
  x.v = Vec3(5.0, 0.0, 0.0);
  const auto d =
      plant_derivative(x, RotorThrusts::Constant(1.0), cfg, params, Vec3::Zero(), Vec3::Zero());
  const auto d0 = f_dyn(x, RotorThrusts::Constant(1.0), params);
  CHECK((d.dv - d0.dv - Vec3(-1.5, 0.0, 0.0)).norm() < 1e-12);
}

TEST_CASE("the drag board doubles quadratic y-drag when configured equal to base") {
  QuadParams params;
  SimConfig base;
  base.drag.quad = Vec3::Constant(0.02);
  SimConfig board = base;
  board.drag.quad_y_extra = 0.02;
  QuadState x;
  x.v = Vec3(0.0, 5.0, 0.0);
  const RotorThrusts u = RotorThrusts::Constant(1.0);
  const auto d0 = f_dyn(x, u, params).dv;
  const auto dy_base = plant_derivative(x, u, base, params, Vec3::Zero(), Vec3::Zero()).dv - d0;
  const auto dy_board =
      plant_derivative(x, u, board, params, Vec3::Zero(), Vec3::Zero()).dv - d0;
  CHECK(dy_board.y() == doctest::Approx(2.0 * dy_base.y()).epsilon(1e-12));
}

TEST_CASE("simulation is deterministic per seed and exactly repeatable") {
  QuadParams params;
  SimConfig cfg;
  cfg.drag.lin = Vec3::Constant(0.2);
  cfg.noise.force_std = 0.05;
  cfg.noise.torque_std = 1e-3;
  cfg.noise.motor_std = 0.02;
  cfg.noise.motor_bias_scale = 0.01;
  QuadState x0;
  x0.v = Vec3(1.0, 0.0, 0.0);

  auto wa = SimWorld::create(cfg, params, x0, 42);
  auto wb = SimWorld::create(cfg, params, x0, 42);
  auto wc = SimWorld::create(cfg, params, x0, 43);
  const RotorThrusts u = RotorThrusts::Constant(params.hover_thrust());
  step_sim(wa, u, 0.5);
  step_sim(wb, u, 0.5);
  step_sim(wc, u, 0.5);
  CHECK((wa.x.to_vector() - wb.x.to_vector()).norm() == 0.0);
  CHECK((wa.x.to_vector() - wc.x.to_vector()).norm() > 0.0);
}

TEST_CASE("hover without disturbances does not drift over 10 seconds") {
  QuadParams params;
  SimConfig cfg;
  auto w = SimWorld::create(cfg, params, QuadState{}, 7);
  step_sim(w, RotorThrusts::Constant(params.hover_thrust()), 10.0);
  CHECK(w.x.p.norm() < 1e-6);
  CHECK(w.x.v.norm() < 1e-6);
}

TEST_CASE("duration must align with the simulation step") {
  QuadParams params;
  SimConfig cfg;
  auto w = SimWorld::create(cfg, params, QuadState{}, 7);
  CHECK_THROWS_AS(step_sim(w, RotorThrusts::Zero(), 0.00123), std::invalid_argument);
}

TEST_CASE("force and torque noise are zero-mean") {
  QuadParams params;
  SimConfig cfg;
  cfg.noise.force_std = 0.08;
  cfg.noise.torque_std = 2e-3;
  auto w = SimWorld::create(cfg, params, QuadState{}, 99);
  const RotorThrusts u = RotorThrusts::Constant(params.hover_thrust());
  const int n = 100000;
  Vec3 sum = Vec3::Zero(), sumsq = Vec3::Zero();
  for (int k = 0; k < n; ++k) {
    const QuadState before = w.x;
    step_sim(w, u, cfg.sim_dt);
    const Vec3 a_pred = f_dyn(before, u, params).dv;
    const Vec3 a_res = (w.x.v - before.v) / cfg.sim_dt - a_pred;
    sum += a_res;
    sumsq += a_res.cwiseProduct(a_res);
  }
  const Vec3 mean = sum / n;
  for (int axis = 0; axis < 3; ++axis) {
    const double std = std::sqrt(sumsq[axis] / n - mean[axis] * mean[axis]);
    CHECK(std::abs(mean[axis]) < 3.0 * std / std::sqrt(static_cast<double>(n)));
  }
}

TEST_CASE("closed loop on a calm circle tracks tightly and reproducibly") {
  QuadParams params;
  const auto traj = circle(short_circle(3.0), params);
  const auto prob = default_problem();
  SolverSettings st;
  SimConfig cfg;  // disturbance-free
  RolloutOptions opt;
  opt.seed = 5;

  const auto a = run_closed_loop(traj, prob, st, cfg, opt);
  CHECK(!a.crashed);
  CHECK(a.rmse < 0.01);
  CHECK(a.max_speed > 2.5);
  CHECK(a.log.size() == a.ticks.size());
  CHECK(a.log.size() == static_cast<size_t>(std::lround(traj.duration() / opt.control_dt)));

  const auto b = run_closed_loop(traj, prob, st, cfg, opt);
  CHECK(a.rmse == b.rmse);
  REQUIRE(a.log.size() == b.log.size());
  for (size_t i = 0; i < a.log.size(); i += 97)
    CHECK((a.log[i].x.to_vector() - b.log[i].x.to_vector()).norm() == 0.0);
}

TEST_CASE("diverging tracking is flagged as a crash with a partial log") {
  QuadParams params;
  const auto traj = circle(short_circle(3.0), params);
  const auto prob = default_problem();
  SolverSettings st;
  SimConfig cfg;
  RolloutOptions opt;
  opt.crash_pos_tol = 1e-4;  // impossible to satisfy from the ramp transient
  const auto r = run_closed_loop(traj, prob, st, cfg, opt);
  CHECK(r.crashed);
  CHECK(!r.crash_reason.empty());
  CHECK(r.log.size() < static_cast<size_t>(std::lround(traj.duration() / opt.control_dt)));
}

TEST_CASE("speed-binned RMSE recovers constructed fixtures") {
  RolloutResult r;
  auto push = [&](double speed, double err) {
    TickTelemetry t;
    t.speed = speed;
    t.pos_err = err;
    r.ticks.push_back(t);
  };
  push(1.0, 0.1);
  push(1.5, 0.1);
  push(3.0, 0.4);
  push(3.5, 0.4);
  const double edges[] = {0.0, 2.0, 4.0, 6.0};
  const auto bins = speed_binned_rmse(r, edges);
  REQUIRE(bins.size() == 2);  // the 4-6 bin is absent, not zero
  CHECK(bins[0].rmse == doctest::Approx(0.1));
  CHECK(bins[0].count == 2);
  CHECK(bins[1].rmse == doctest::Approx(0.4));
  CHECK(bins[1].hi == 4.0);

  const double wide[] = {0.0, 10.0};
  const auto all = speed_binned_rmse(r, wide);
  REQUIRE(all.size() == 1);
  double sq = 0.0;
  for (const auto& t : r.ticks) sq += t.pos_err * t.pos_err;
  CHECK(all[0].rmse == doctest::Approx(std::sqrt(sq / r.ticks.size())));
}

TEST_CASE("RMSE against a reference playback is exactly zero") {
  QuadParams params;
  const auto traj = circle(short_circle(4.0), params);
  std::vector<Vec3> ref, actual;
  for (const auto& s : traj.samples) {
    ref.push_back(s.x.p);
    actual.push_back(s.x.p);
  }
  CHECK(position_rmse(actual, ref) == 0.0);
}
