#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpmpc/trajectory.hpp"

#include <cstdio>

using namespace gpmpc;

namespace {

TrajectorySpec circle_spec(double v_peak) {
  TrajectorySpec s;
  s.kind = TrajectoryKind::Circle;
  s.v_peak = v_peak;
  s.scale = 5.0;
  s.z0 = 3.0;
  s.duration = 16.0;
  return s;
}

TrajectorySpec lemniscate_spec(double v_peak, double scale) {
  TrajectorySpec s = circle_spec(v_peak);
  s.kind = TrajectoryKind::Lemniscate;
  s.scale = scale;
  return s;
}

TrajectorySpec random_spec(std::uint64_t seed) {
  TrajectorySpec s;
  s.kind = TrajectoryKind::RandomPoly;
  s.seed = seed;
  return s;
}

double max_speed(const ReferenceTrajectory& t) {
  double m = 0.0;
  for (const auto& s : t.samples) m = std::max(m, s.x.v.norm());
  return m;
}

}  // namespace

TEST_CASE("lemniscate starts at (scale, 0, z0) and stays planar") {
  QuadParams params;
  auto spec = lemniscate_spec(4.0, 2.0);
  const auto traj = lemniscate(spec, params);
  CHECK((traj.samples.front().x.p - Vec3(2.0, 0.0, 3.0)).norm() < 1e-9);
  for (const auto& s : traj.samples) CHECK(std::abs(s.x.p.z() - 3.0) < 1e-9);
}

TEST_CASE("lemniscate peak sampled speed hits v_peak within 2%") {
  QuadParams params;
  for (double v : {4.0, 8.0, 12.0}) {
    const auto traj = lemniscate(lemniscate_spec(v, 5.0), params);
    CHECK(max_speed(traj) == doctest::Approx(v).epsilon(0.02));
  }
}

TEST_CASE("circle geometry, rest endpoints and centripetal acceleration") {
  QuadParams params;
  const double v_peak = 8.0;
  const auto spec = circle_spec(v_peak);
  const auto traj = circle(spec, params);

  for (const auto& s : traj.samples)
    CHECK(std::abs(s.x.p.head<2>().norm() - spec.scale) < 1e-9);
  CHECK(traj.samples.front().x.v.norm() == 0.0);
  CHECK(traj.samples.back().x.v.norm() == 0.0);
  CHECK(max_speed(traj) == doctest::Approx(v_peak).epsilon(0.02));

  // centripetal acceleration at the peak, from position differences
  const size_t mid = traj.samples.size() / 2;
  const double dt = traj.sample_dt;
  const Vec3 acc = (traj.samples[mid + 1].x.p - 2.0 * traj.samples[mid].x.p +
                    traj.samples[mid - 1].x.p) /
                   (dt * dt);
  CHECK(acc.head<2>().norm() ==
        doctest::Approx(v_peak * v_peak / spec.scale).epsilon(0.02));
}

TEST_CASE("circle speed profile ramps monotonically up then down") {
  QuadParams params;
  const auto traj = circle(circle_spec(6.0), params);
  size_t peak = 0;
  for (size_t i = 0; i < traj.samples.size(); ++i)
    if (traj.samples[i].x.v.norm() > traj.samples[peak].x.v.norm()) peak = i;
  for (size_t i = 0; i + 1 <= peak; ++i)
    CHECK(traj.samples[i + 1].x.v.norm() >= traj.samples[i].x.v.norm() - 1e-9);
  for (size_t i = peak; i + 1 < traj.samples.size(); ++i)
    CHECK(traj.samples[i + 1].x.v.norm() <= traj.samples[i].x.v.norm() + 1e-9);
}

TEST_CASE("random polynomials are deterministic per seed") {
  QuadParams params;
  const auto a = random_polynomial(random_spec(123), params);
  const auto b = random_polynomial(random_spec(123), params);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK((a.samples[i].x.to_vector() - b.samples[i].x.to_vector()).norm() == 0.0);
    CHECK((a.samples[i].u - b.samples[i].u).norm() == 0.0);
  }
  const auto c = random_polynomial(random_spec(124), params);
  CHECK((a.samples[50].x.p - c.samples[50].x.p).norm() > 1e-6);
}

TEST_CASE("random polynomials respect the axis-wise speed cap") {
  QuadParams params;
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const auto traj = random_polynomial(random_spec(seed), params);
    for (const auto& s : traj.samples)
      CHECK(s.x.v.cwiseAbs().maxCoeff() <= 16.0 + 1e-9);
  }
}

TEST_CASE("random polynomial joints are continuous through jerk") {
  QuadParams params;
  const auto handle = random_polynomial_path(random_spec(7), params);
  for (size_t i = 1; i + 1 < handle.joint_times.size(); ++i) {
    const double tj = handle.joint_times[i];
    const FlatOutput before = handle.eval(tj - 1e-12);
    const FlatOutput after = handle.eval(tj + 1e-12);
    CHECK((before.p - after.p).norm() < 1e-9);
    CHECK((before.v - after.v).norm() < 1e-9);
    CHECK((before.a - after.a).norm() < 1e-7);
    CHECK((before.j - after.j).norm() < 1e-6);
  }
}

TEST_CASE("flat reference of a static point is the hover reference") {
  QuadParams params;
  FlatOutput f;
  f.p = Vec3(1.0, 2.0, 3.0);
  const RefSample s = flat_reference(f, Vec3::Zero(), 0.0, params);
  CHECK((s.x.q - quat_identity()).norm() < 1e-12);
  CHECK(s.x.w.norm() < 1e-12);
  CHECK((s.u - RotorThrusts::Constant(params.hover_thrust())).norm() < 1e-10);
}

TEST_CASE("flat reference of a constant vertical climb") {
  QuadParams params;
  FlatOutput f;
  f.a = Vec3(0.0, 0.0, 2.5);
  const RefSample s = flat_reference(f, Vec3::Zero(), 0.0, params);
  CHECK((s.x.q - quat_identity()).norm() < 1e-12);
  CHECK(s.u.sum() == doctest::Approx(params.mass * (9.81 + 2.5)).epsilon(1e-10));
}

TEST_CASE("references are dynamically consistent with the rigid-body model") {
  QuadParams params;
  // finer sampling keeps the central-difference oracle's truncation error
  // well below the tolerance on the aggressive trajectories
  auto cs = circle_spec(10.0);
  auto ls = lemniscate_spec(10.0, 5.0);
  auto rs = random_spec(11);
  cs.sample_dt = ls.sample_dt = rs.sample_dt = 0.002;
  std::vector<ReferenceTrajectory> trajs;
  trajs.push_back(circle(cs, params));
  trajs.push_back(lemniscate(ls, params));
  trajs.push_back(random_polynomial(rs, params));

  for (const auto& traj : trajs) {
    const double dt = traj.sample_dt;
    for (size_t k = 1; k + 1 < traj.samples.size(); k += 3) {
      const auto& prev = traj.samples[k - 1].x;
      const auto& cur = traj.samples[k];
      const auto& next = traj.samples[k + 1].x;
      const StateDerivative d = f_dyn(cur.x, cur.u, params);
      CHECK((d.dp - (next.p - prev.p) / (2 * dt)).norm() < 1e-2);
      CHECK((d.dv - (next.v - prev.v) / (2 * dt)).norm() < 1e-2);
      CHECK((d.dq - (next.q - prev.q) / (2 * dt)).norm() < 1e-2);
      CHECK((d.dw - (next.w - prev.w) / (2 * dt)).norm() < 2e-2);
    }
  }
}

TEST_CASE("open-loop playback from the circle peak stays on the reference") {
  QuadParams params;
  const auto traj = circle(circle_spec(8.0), params);
  const size_t mid = traj.samples.size() / 2;
  const double node_dt = 0.05;
  const int stride = static_cast<int>(std::round(node_dt / traj.sample_dt));

  QuadState x = traj.samples[mid].x;
  const RotorThrusts u = traj.samples[mid].u;
  const int substeps = 100;
  for (int i = 0; i < substeps; ++i)
    x = rk4_step_nominal(x, u, node_dt / substeps, params);
  CHECK((x.p - traj.samples[mid + stride].x.p).norm() < 1e-3);
}

TEST_CASE("demands beyond the thrust-to-weight envelope are rejected") {
  QuadParams params;
  auto spec = circle_spec(14.0);
  spec.scale = 1.0;  // 196 m/s^2 centripetal demand
  spec.duration = 10.0;
  CHECK_THROWS_AS(circle(spec, params), TrajectoryError);
}

TEST_CASE("all reference inputs stay inside the box for feasible specs") {
  QuadParams params;
  for (const auto& traj :
       {circle(circle_spec(12.0), params), lemniscate(lemniscate_spec(12.0, 5.0), params),
        random_polynomial(random_spec(21), params)}) {
    for (const auto& s : traj.samples) {
      CHECK(s.u.minCoeff() >= 0.0);
      CHECK(s.u.maxCoeff() <= params.max_thrust);
      CHECK(std::abs(s.x.q.norm() - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("reference windows stride the samples and hold the final sample") {
  QuadParams params;
  const auto traj = circle(circle_spec(4.0), params);
  const auto win = reference_window(traj, 1.0, 20, 0.05);
  REQUIRE(win.size() == 21);
  CHECK(win[0].t == doctest::Approx(1.0));
  CHECK((win[3].x.p - traj.samples[115].x.p).norm() == 0.0);

  const auto tail = reference_window(traj, traj.duration() - 0.1, 20, 0.05);
  CHECK((tail.back().x.p - traj.samples.back().x.p).norm() == 0.0);
  CHECK(tail.back().t == doctest::Approx(traj.duration() - 0.1 + 20 * 0.05));

  CHECK_THROWS_AS(reference_window(traj, 0.0, 20, 0.013), std::invalid_argument);
}

TEST_CASE("trajectory CSV round trip") {
  QuadParams params;
  auto spec = circle_spec(5.0);
  spec.duration = 4.0;
  const auto traj = circle(spec, params);
  const std::string path = "/tmp/gpmpc_traj.csv";
  save_trajectory_csv(traj, path);
  const auto loaded = load_trajectory_csv(path);
  REQUIRE(loaded.size() == traj.size());
  CHECK(loaded.sample_dt == doctest::Approx(traj.sample_dt));
  for (size_t i = 0; i < traj.size(); i += 17) {
    CHECK((loaded.samples[i].x.to_vector() - traj.samples[i].x.to_vector()).norm() == 0.0);
    CHECK((loaded.samples[i].u - traj.samples[i].u).norm() == 0.0);
  }
  std::remove(path.c_str());
}
