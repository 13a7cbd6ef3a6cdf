#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpmpc/mpc.hpp"

#include <random>

using namespace gpmpc;

namespace {

std::mt19937_64 rng(77);

Quat random_unit_quat() {
  std::normal_distribution<double> n(0.0, 1.0);
  return quat_normalized(Quat(n(rng), n(rng), n(rng), n(rng)));
}

QuadState random_state() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  QuadState x;
  x.p = 3.0 * Vec3(u(rng), u(rng), u(rng));
  x.q = random_unit_quat();
  x.v = 8.0 * Vec3(u(rng), u(rng), u(rng));
  x.w = 3.0 * Vec3(u(rng), u(rng), u(rng));
  return x;
}

GpCorrection make_correction(double lin, double quad) {
  GpCorrection corr;
  for (int axis = 0; axis < 3; ++axis) {
    const int n = 31;
    GpDataset d;
    d.z.resize(n, 1);
    d.y.resize(n);
    for (int i = 0; i < n; ++i) {
      const double v = -12.0 + 24.0 * i / (n - 1);
      d.z(i, 0) = v;
      d.y[i] = -lin * v - quad * v * std::abs(v);
    }
    corr.axis[axis] = GpAxisModel::fit(d, RbfHyperparams::isotropic(1, 2.5, 4.0, 1e-3));
  }
  return corr;
}

MpcProblem make_problem(DynamicsMode mode) {
  MpcProblem p;
  p.horizon = 20;
  p.node_dt = 0.05;
  p.Q = MpcProblem::diagonal_weights(100.0, 5.0, 4.0, 0.1);
  p.R = 0.25 * Eigen::Matrix4d::Identity();
  p.u_min = 0.0;
  p.u_max = p.params.max_thrust;
  p.mode = std::move(mode);
  return p;
}

std::vector<RefSample> hover_window(const MpcProblem& prob, double t0,
                                    const Vec3& pos = Vec3::Zero()) {
  std::vector<RefSample> w(prob.horizon + 1);
  for (int k = 0; k <= prob.horizon; ++k) {
    w[k].t = t0 + k * prob.node_dt;
    w[k].x.p = pos;
    w[k].u = RotorThrusts::Constant(prob.params.hover_thrust());
  }
  return w;
}

}  // namespace

TEST_CASE("error-state boxplus/boxminus round trip and Jacobians") {
  for (int i = 0; i < 50; ++i) {
    const QuadState a = random_state();
    const QuadState b = random_state();
    const Vec12 d = state_boxminus(a, b);
    const QuadState a2 = state_boxplus(b, d);
    CHECK((a2.p - a.p).norm() < 1e-12);
    CHECK((a2.v - a.v).norm() < 1e-12);
    CHECK((a2.w - a.w).norm() < 1e-12);
    CHECK(std::min((a2.q - a.q).norm(), (a2.q + a.q).norm()) < 1e-12);
  }
  // Jacobians against finite differences
  const double h = 1e-6;
  for (int i = 0; i < 20; ++i) {
    const QuadState x = random_state();
    const QuadState y = random_state();
    const auto t = boxplus_jacobian(x);
    for (int c = 0; c < 12; ++c) {
      Vec12 dp = Vec12::Zero(), dm = Vec12::Zero();
      dp[c] = h;
      dm[c] = -h;
      const auto fd =
          (state_boxplus(x, dp).to_vector() - state_boxplus(x, dm).to_vector()) / (2 * h);
      CHECK((t.col(c) - fd).norm() < 1e-7);
    }
    const auto p = boxminus_jacobian(x, y);
    for (int c = 0; c < 13; ++c) {
      auto xp = x.to_vector(), xm = x.to_vector();
      xp[c] += h;
      xm[c] -= h;
      const Vec12 fd = (state_boxminus(QuadState::from_vector(xp), y) -
                        state_boxminus(QuadState::from_vector(xm), y)) /
                       (2 * h);
      CHECK((p.col(c) - fd).norm() < 1e-6);
    }
  }
}

TEST_CASE("cost is zero on the reference, quadratic and homogeneous") {
  const auto prob = make_problem(NominalMode{});
  auto window = hover_window(prob, 0.0);
  std::vector<QuadState> xs(prob.horizon + 1);
  std::vector<RotorThrusts> us(prob.horizon, RotorThrusts::Constant(prob.params.hover_thrust()));
  for (int k = 0; k <= prob.horizon; ++k) xs[k] = window[k].x;
  CHECK(build_cost(xs, us, window, prob) == 0.0);

  // single-node position offset
  xs[4].p += Vec3(0.2, -0.1, 0.3);
  const double c1 = build_cost(xs, us, window, prob);
  CHECK(c1 == doctest::Approx(100.0 * Vec3(0.2, -0.1, 0.3).squaredNorm()).epsilon(1e-12));

  // doubling all deviations quadruples the cost
  for (int k = 0; k <= prob.horizon; ++k) {
    const Vec12 e = state_boxminus(xs[k], window[k].x);
    xs[k] = state_boxplus(window[k].x, 2.0 * e);
  }
  for (auto& u : us) u += (u - window[0].u);  // still zero
  const double c2 = build_cost(xs, us, window, prob);
  CHECK(c2 == doctest::Approx(4.0 * c1).epsilon(1e-9));
}

TEST_CASE("dynamics linearization matches finite differences in all modes") {
  std::vector<std::pair<std::string, MpcProblem>> problems;
  problems.emplace_back("nominal", make_problem(NominalMode{}));
  problems.emplace_back("rdrv", make_problem(RdrvMode{RdrvModel{Vec3(0.4, 0.3, 0.2)}}));
  problems.emplace_back("gp", make_problem(GpMode{make_correction(0.25, 0.04), false}));
  problems.emplace_back("gp_node_held", make_problem(GpMode{make_correction(0.25, 0.04), true}));

  const double h = 1e-5;
  for (auto& [name, prob] : problems) {
    CAPTURE(name);
    double worst = 0.0;
    for (int trial = 0; trial < 25; ++trial) {
      const QuadState x = random_state();
      std::uniform_real_distribution<double> uu(0.2 * prob.u_max, 0.8 * prob.u_max);
      const RotorThrusts u(uu(rng), uu(rng), uu(rng), uu(rng));
      const QuadState x_next = integrate_node(x, u, prob);
      const auto lin = linearize_dynamics(x, u, x_next, prob);

      for (int c = 0; c < 12; ++c) {
        Vec12 d = Vec12::Zero();
        d[c] = h;
        const Vec12 fp = state_boxminus(integrate_node(state_boxplus(x, d), u, prob), x_next);
        d[c] = -h;
        const Vec12 fm = state_boxminus(integrate_node(state_boxplus(x, d), u, prob), x_next);
        const Vec12 fd = (fp - fm) / (2 * h);
        for (int r = 0; r < 12; ++r)
          worst = std::max(worst, std::abs(lin.A(r, c) - fd[r]) /
                                      std::max(1.0, std::abs(fd[r])));
      }
      for (int c = 0; c < 4; ++c) {
        RotorThrusts up = u, um = u;
        up[c] += h;
        um[c] -= h;
        const Vec12 fd = (state_boxminus(integrate_node(x, up, prob), x_next) -
                          state_boxminus(integrate_node(x, um, prob), x_next)) /
                         (2 * h);
        for (int r = 0; r < 12; ++r)
          worst = std::max(worst, std::abs(lin.B(r, c) - fd[r]) /
                                      std::max(1.0, std::abs(fd[r])));
      }
    }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("hover linearization has the expected kinematic structure") {
  const auto prob = make_problem(NominalMode{});
  QuadState hover;
  const RotorThrusts u_h = RotorThrusts::Constant(prob.params.hover_thrust());
  const QuadState next = integrate_node(hover, u_h, prob);
  const auto lin = linearize_dynamics(hover, u_h, next, prob);
  CHECK((lin.A.block<3, 3>(0, 0) - Mat3::Identity()).norm() < 1e-12);
  CHECK((lin.A.block<3, 3>(0, 6) - prob.node_dt * Mat3::Identity()).norm() < 1e-12);
  CHECK(lin.c.norm() < 1e-12);
}

TEST_CASE("zero-target GPs linearize identically to the nominal mode") {
  const auto nom = make_problem(NominalMode{});
  const auto gp0 = make_problem(GpMode{make_correction(0.0, 0.0), false});
  const auto gp0h = make_problem(GpMode{make_correction(0.0, 0.0), true});
  for (int i = 0; i < 10; ++i) {
    const QuadState x = random_state();
    const RotorThrusts u = RotorThrusts::Constant(2.0);
    const QuadState xn = integrate_node(x, u, nom);
    const auto l0 = linearize_dynamics(x, u, xn, nom);
    for (const auto* prob : {&gp0, &gp0h}) {
      const auto l1 = linearize_dynamics(x, u, xn, *prob);
      CHECK((l1.A - l0.A).norm() < 1e-10);
      CHECK((l1.B - l0.B).norm() < 1e-10);
      CHECK(l1.c.norm() < 1e-10);
    }
  }
}

TEST_CASE("solving on the reference returns the reference input") {
  const auto prob = make_problem(NominalMode{});
  SolverSettings st;
  MpcSolver solver(prob, st);
  const auto window = hover_window(prob, 0.0);
  QuadState x0;
  const auto sol = solver.solve(x0, window);
  REQUIRE(sol.u_traj.size() == 20);
  for (const auto& u : sol.u_traj)
    CHECK((u - RotorThrusts::Constant(prob.params.hover_thrust())).norm() < 1e-7);
  CHECK(sol.kkt_residual < 1e-6);
  CHECK((sol.x_traj[0].to_vector() - x0.to_vector()).norm() < 1e-12);
}

TEST_CASE("repeated RTI ticks stabilize a hover offset monotonically") {
  const auto prob = make_problem(NominalMode{});
  SolverSettings st;
  MpcSolver solver(prob, st);
  QuadState x;
  x.p = Vec3(0.5, 0.0, 0.0);
  const double control_dt = 0.01;
  std::vector<double> errs;
  for (int tick = 0; tick < 300; ++tick) {
    auto window = hover_window(prob, tick * control_dt);
    const auto sol = solver.solve(x, window);
    CHECK((sol.x_traj[0].to_vector() - x.to_vector()).norm() < 1e-9);
    for (int s = 0; s < 10; ++s)
      x = rk4_step_nominal(x, sol.u_traj[0], control_dt / 10.0, prob.params);
    errs.push_back(x.p.norm());
  }
  CHECK(errs.back() < 1e-3);
  for (size_t k = 5; k + 1 < errs.size(); ++k) {
    if (errs[k] < 1e-4) break;
    CHECK(errs[k + 1] <= errs[k] + 1e-9);
  }
}

TEST_CASE("active input bounds are respected when the reference is unreachable") {
  const auto prob = make_problem(NominalMode{});
  SolverSettings st;
  MpcSolver solver(prob, st);
  QuadState x0;
  auto window = hover_window(prob, 0.0, Vec3(0.0, 0.0, 8.0));  // 8 m above, now
  for (auto& s : window) s.u = RotorThrusts::Constant(prob.params.hover_thrust());
  const auto sol = solver.solve(x0, window);
  double u_max_seen = 0.0;
  for (const auto& u : sol.u_traj) {
    CHECK(u.maxCoeff() <= prob.u_max + 1e-9);
    CHECK(u.minCoeff() >= prob.u_min - 1e-9);
    u_max_seen = std::max(u_max_seen, u.maxCoeff());
  }
  CHECK(u_max_seen == doctest::Approx(prob.u_max));  // saturated climb
}

TEST_CASE("full SQP decreases the exact-penalty merit and reaches the KKT tolerance") {
  const auto prob = make_problem(NominalMode{});
  SolverSettings st;
  st.max_sqp_iters = 1;
  st.line_search = true;
  MpcSolver solver(prob, st);
  QuadState x;
  x.p = Vec3(0.8, -0.5, 0.4);
  x.v = Vec3(1.0, 0.0, -0.5);
  const auto window = hover_window(prob, 0.0);

  const double rho = 1e4;
  auto merit_of = [&](const MpcSolution& sol) {
    double defects = 0.0;
    for (int k = 0; k < prob.horizon; ++k)
      defects += state_boxminus(integrate_node(sol.x_traj[k], sol.u_traj[k], prob),
                                sol.x_traj[k + 1])
                     .lpNorm<1>();
    return build_cost(sol.x_traj, sol.u_traj, window, prob) + rho * defects;
  };

  // repeated solves at a fixed time are plain SQP iterations on a fixed NLP
  std::vector<double> merits;
  MpcSolution last;
  for (int it = 0; it < 10; ++it) {
    last = solver.solve(x, window);
    merits.push_back(merit_of(last));
  }
  for (size_t k = 0; k + 1 < merits.size(); ++k) {
    if (merits[k] < 1e-6) break;
    CHECK(merits[k + 1] <= merits[k] * (1.0 + 1e-9) + 1e-9);
  }

  SolverSettings full;
  full.max_sqp_iters = 40;
  full.line_search = true;
  full.kkt_tol = 1e-7;
  MpcSolver full_solver(prob, full);
  const auto sol = full_solver.solve(x, window);
  CHECK(sol.kkt_residual < 1e-7);
}

TEST_CASE("zero-target GP closed loop reproduces the nominal closed loop") {
  const auto nom = make_problem(NominalMode{});
  const auto gp0 = make_problem(GpMode{make_correction(0.0, 0.0), false});
  SolverSettings st;
  MpcSolver sa(nom, st), sb(gp0, st);
  QuadState xa, xb;
  xa.p = xb.p = Vec3(0.4, -0.2, 0.1);
  for (int tick = 0; tick < 120; ++tick) {
    const auto wa = hover_window(nom, tick * 0.01);
    const auto ua = sa.solve(xa, wa).u_traj[0];
    const auto ub = sb.solve(xb, wa).u_traj[0];
    CHECK((ua - ub).norm() < 1e-8);
    for (int s = 0; s < 5; ++s) {
      xa = rk4_step_nominal(xa, ua, 0.002, nom.params);
      xb = rk4_step_nominal(xb, ub, 0.002, nom.params);
    }
    REQUIRE((xa.to_vector() - xb.to_vector()).norm() < 1e-8);
  }
}

TEST_CASE("solves are bitwise deterministic") {
  const auto prob = make_problem(GpMode{make_correction(0.2, 0.03), false});
  SolverSettings st;
  MpcSolver sa(prob, st), sb(prob, st);
  QuadState x;
  x.p = Vec3(0.3, 0.2, -0.4);
  x.v = Vec3(2.0, -1.0, 0.0);
  for (int tick = 0; tick < 30; ++tick) {
    const auto w = hover_window(prob, tick * 0.01);
    const auto ua = sa.solve(x, w);
    const auto ub = sb.solve(x, w);
    for (int k = 0; k < prob.horizon; ++k) {
      CHECK(ua.u_traj[k] == ub.u_traj[k]);
      CHECK(ua.x_traj[k].to_vector() == ub.x_traj[k].to_vector());
    }
  }
}
