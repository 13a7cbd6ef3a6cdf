#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "gpmpc/augmentation.hpp"

#include <cstdio>
#include <functional>
#include <random>

using namespace gpmpc;

namespace {

std::mt19937_64 rng(19);

Quat random_unit_quat() {
  std::normal_distribution<double> n(0.0, 1.0);
  return quat_normalized(Quat(n(rng), n(rng), n(rng), n(rng)));
}

// GP correction trained on noise-free samples of an axis-wise law.
GpCorrection correction_from(const std::function<double(int, double)>& law, double vmax,
                             int n = 41) {
  GpCorrection corr;
  for (int axis = 0; axis < 3; ++axis) {
    GpDataset d;
    d.z.resize(n, 1);
    d.y.resize(n);
    double y_abs = 1e-6;
    for (int i = 0; i < n; ++i) {
      const double v = -vmax + 2.0 * vmax * i / (n - 1);
      d.z(i, 0) = v;
      d.y[i] = law(axis, v);
      y_abs = std::max(y_abs, std::abs(d.y[i]));
    }
    corr.axis[axis] =
        GpAxisModel::fit(d, RbfHyperparams::isotropic(1, vmax / 6.0, y_abs, 1e-3));
  }
  return corr;
}

GpCorrection zero_correction() {
  return correction_from([](int, double) { return 0.0; }, 8.0, 11);
}

ResidualDataset synthetic_residuals(const std::function<Vec3(const Vec3&)>& law, int n,
                                    double vmax, unsigned seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(-vmax, vmax);
  ResidualDataset ds;
  for (int i = 0; i < n; ++i) {
    ResidualRow r;
    r.t = i * 0.01;
    r.dt = 0.01;
    r.v_body = Vec3(u(gen), u(gen), u(gen));
    r.a_err_body = law(r.v_body);
    ds.rows.push_back(r);
  }
  return ds;
}

QuadState random_state() {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  QuadState x;
  x.p = Vec3(u(rng), u(rng), u(rng));
  x.q = random_unit_quat();
  x.v = 5.0 * Vec3(u(rng), u(rng), u(rng));
  x.w = 2.0 * Vec3(u(rng), u(rng), u(rng));
  return x;
}

}  // namespace

TEST_CASE("zero-target GPs leave the dynamics untouched") {
  QuadParams params;
  const auto corr = zero_correction();
  for (int i = 0; i < 10; ++i) {
    const QuadState x = random_state();
    const RotorThrusts u = RotorThrusts::Constant(2.0);
    CHECK(gp_accel_correction(corr, x).norm() < 1e-9);
    const auto da = f_corrected(x, u, params, corr);
    const auto db = f_dyn(x, u, params);
    CHECK((da.to_vector() - db.to_vector()).norm() < 1e-8);
  }
}

TEST_CASE("a resting quad gets no correction from symmetric data") {
  const auto corr = correction_from([](int, double v) { return -0.2 * v * std::abs(v); }, 8.0);
  QuadState x;  // at rest
  CHECK(gp_accel_correction(corr, x).norm() < 1e-3);
}

TEST_CASE("GPs reproduce a quadratic drag law at 5 m/s") {
  const auto corr = correction_from([](int, double v) { return -0.3 * v * std::abs(v); }, 10.0);
  QuadState x;
  x.v = Vec3(5.0, 0.0, 0.0);
  const Vec3 c = gp_accel_correction(corr, x);
  CHECK(c.x() == doctest::Approx(-7.5).epsilon(0.10));
}

TEST_CASE("correction is applied in the body frame and rotated to world") {
  QuadParams params;
  const auto corr = correction_from(
      [](int axis, double) { return axis == 0 ? 1.0 : 0.0; }, 8.0);
  const RotorThrusts u = RotorThrusts::Constant(1.0);

  QuadState level;
  const Vec3 c_level = gp_accel_correction(corr, level);
  CHECK((f_corrected(level, u, params, corr).dv - f_dyn(level, u, params).dv - c_level).norm() <
        1e-12);
  CHECK(c_level.x() == doctest::Approx(1.0).epsilon(1e-3));

  QuadState yawed;
  yawed.q = quat_exp(Vec3(0, 0, M_PI / 2));
  const Vec3 dv_diff = f_corrected(yawed, u, params, corr).dv - f_dyn(yawed, u, params).dv;
  CHECK(dv_diff.y() == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(std::abs(dv_diff.x()) < 1e-3);
}

TEST_CASE("corrections only ever touch the velocity derivative") {
  QuadParams params;
  const auto corr = correction_from([](int, double v) { return 0.1 * v; }, 8.0);
  const RdrvModel rd{Vec3(0.4, 0.2, 0.1)};
  for (int i = 0; i < 10; ++i) {
    const QuadState x = random_state();
    const RotorThrusts u = RotorThrusts::Constant(1.5);
    const auto d0 = f_dyn(x, u, params);
    for (const auto& d : {f_corrected(x, u, params, corr), f_rdrv(x, u, params, rd)}) {
      CHECK((d.dp - d0.dp).norm() == 0.0);
      CHECK((d.dq - d0.dq).norm() == 0.0);
      CHECK((d.dw - d0.dw).norm() == 0.0);
    }
  }
}

TEST_CASE("correction depends on body velocity only (frame consistency)") {
  const auto corr = correction_from([](int a, double v) { return -0.1 * (a + 1) * v; }, 9.0);
  for (int i = 0; i < 20; ++i) {
    QuadState x = random_state();
    const Quat r = random_unit_quat();
    QuadState x2 = x;
    x2.q = quat_mul(r, x.q);
    x2.v = quat_rotate(r, x.v);
    CHECK((gp_accel_correction(corr, x) - gp_accel_correction(corr, x2)).norm() < 1e-10);
  }
}

TEST_CASE("correction magnitude stays bounded inside the training range") {
  const auto corr = correction_from([](int, double v) { return -0.25 * v * std::abs(v); }, 10.0);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (int axis = 0; axis < 3; ++axis) {
    const double y_max = corr.axis[axis].data().y.cwiseAbs().maxCoeff();
    const double bound = y_max + 3.0 * corr.axis[axis].hyper().sigma_f;
    for (int i = 0; i < 200; ++i)
      CHECK(std::abs(corr.axis[axis].predict_mean_1d(u(rng))) <= bound);
  }
}

TEST_CASE("rdrv identification recovers exact linear drag") {
  const Vec3 truth(0.5, 0.3, 0.1);
  const auto ds = synthetic_residuals(
      [&](const Vec3& v) { return (-truth).cwiseProduct(v); }, 400, 12.0, 31);
  const auto model = fit_rdrv(ds);
  CHECK((model.drag_coeffs - truth).norm() < 1e-9);

  // Independent least-squares oracle per axis via SVD.
  for (int axis = 0; axis < 3; ++axis) {
    Eigen::MatrixXd a(ds.size(), 1);
    Eigen::VectorXd b(ds.size());
    for (size_t i = 0; i < ds.size(); ++i) {
      a(static_cast<Eigen::Index>(i), 0) = -ds.rows[i].v_body[axis];
      b[static_cast<Eigen::Index>(i)] = ds.rows[i].a_err_body[axis];
    }
    const double oracle = a.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(b)[0];
    CHECK(model.drag_coeffs[axis] == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("rdrv on zero targets is zero, degenerate axes warn") {
  auto ds = synthetic_residuals([](const Vec3&) { return Vec3::Zero(); }, 50, 8.0, 5);
  CHECK(fit_rdrv(ds).drag_coeffs.norm() == 0.0);

  for (auto& r : ds.rows) {
    r.v_body.z() = 0.0;
    r.a_err_body = Vec3(-0.2, -0.2, -0.2).cwiseProduct(r.v_body);
  }
  std::vector<std::string> warnings;
  const auto m = fit_rdrv(ds, &warnings);
  CHECK(m.drag_coeffs.z() == 0.0);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("axis 2") != std::string::npos);
}

TEST_CASE("linear fit underestimates quadratic drag at high speed") {
  // one-sided speed sweep so the bias is visible
  ResidualDataset ds;
  for (int i = 0; i <= 120; ++i) {
    ResidualRow r;
    r.v_body = Vec3::Constant(12.0 * i / 120.0);
    r.a_err_body = -0.3 * r.v_body.cwiseProduct(r.v_body.cwiseAbs());
    r.dt = 0.01;
    ds.rows.push_back(r);
  }
  const auto m = fit_rdrv(ds);
  double rss = 0.0;
  for (const auto& r : ds.rows)
    rss += (r.a_err_body + m.drag_coeffs.cwiseProduct(r.v_body)).squaredNorm();
  CHECK(std::sqrt(rss / ds.size()) > 0.5);
  const double pred_at_12 = m.drag_coeffs.x() * 12.0;
  const double true_at_12 = 0.3 * 144.0;
  CHECK(pred_at_12 < 0.9 * true_at_12);
}

TEST_CASE("rdrv dynamics shift dv by the drag acceleration") {
  QuadParams params;
  const RdrvModel m{Vec3(0.5, 0.0, 0.0)};
  QuadState x;
  x.v = Vec3(2.0, 0.0, 0.0);
  const auto d = f_rdrv(x, RotorThrusts::Constant(1.0), params, m);
  const auto d0 = f_dyn(x, RotorThrusts::Constant(1.0), params);
  CHECK(d.dv.x() - d0.dv.x() == doctest::Approx(-1.0).epsilon(1e-12));

  const RdrvModel zero{};
  const auto dz = f_rdrv(x, RotorThrusts::Constant(1.0), params, zero);
  CHECK((dz.to_vector() - d0.to_vector()).norm() == 0.0);

  QuadState hover;
  const auto dh = f_rdrv(hover, RotorThrusts::Constant(1.0), params, m);
  const auto dh0 = f_dyn(hover, RotorThrusts::Constant(1.0), params);
  CHECK((dh.to_vector() - dh0.to_vector()).norm() == 0.0);
}

TEST_CASE("corrected-dynamics Jacobians match finite differences") {
  QuadParams params;
  const auto corr = correction_from(
      [](int a, double v) { return -0.15 * (a + 1) * v - 0.05 * v * std::abs(v); }, 10.0);
  const RdrvModel rd{Vec3(0.45, 0.3, 0.15)};
  const double h = 1e-5;  // large enough that Gram-conditioning noise stays below truncation
  for (int i = 0; i < 15; ++i) {
    const QuadState x = random_state();
    const RotorThrusts u = RotorThrusts::Constant(2.0);
    Eigen::Matrix<double, 13, 13> fx_gp, fx_rd;
    Eigen::Matrix<double, 13, 4> fu_gp, fu_rd;
    f_corrected_jac(x, u, params, corr, fx_gp, fu_gp);
    f_rdrv_jac(x, u, params, rd, fx_rd, fu_rd);
    for (int c = 0; c < 13; ++c) {
      auto xp = x.to_vector(), xm = x.to_vector();
      xp[c] += h;
      xm[c] -= h;
      const auto sp = QuadState::from_vector(xp), sm = QuadState::from_vector(xm);
      const auto fd_gp =
          (f_corrected(sp, u, params, corr).to_vector() -
           f_corrected(sm, u, params, corr).to_vector()) /
          (2 * h);
      CHECK((fx_gp.col(c) - fd_gp).norm() < 5e-5);
      const auto fd_rd =
          (f_rdrv(sp, u, params, rd).to_vector() - f_rdrv(sm, u, params, rd).to_vector()) /
          (2 * h);
      CHECK((fx_rd.col(c) - fd_rd).norm() < 5e-5);
    }
  }
}

TEST_CASE("model files round trip with kind tags") {
  const RdrvModel rd{Vec3(0.41, 0.32, 0.13)};
  const std::string rd_path = "/tmp/gpmpc_rdrv.json";
  save_rdrv(rd, rd_path);
  CHECK(model_kind(rd_path) == "rdrv");
  CHECK((load_rdrv(rd_path).drag_coeffs - rd.drag_coeffs).norm() == 0.0);

  const auto corr = correction_from([](int, double v) { return -0.2 * v; }, 8.0, 15);
  const std::string gp_path = "/tmp/gpmpc_gpcorr.json";
  save_gp_correction(corr, gp_path);
  CHECK(model_kind(gp_path) == "gp_correction");
  const auto loaded = load_gp_correction(gp_path);
  QuadState x;
  x.v = Vec3(3.0, -2.0, 1.0);
  CHECK((gp_accel_correction(corr, x) - gp_accel_correction(loaded, x)).norm() == 0.0);

  CHECK_THROWS(load_rdrv(gp_path));
  std::remove(rd_path.c_str());
  std::remove(gp_path.c_str());
}
