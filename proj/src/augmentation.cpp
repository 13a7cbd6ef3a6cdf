#include "gpmpc/augmentation.hpp"

#include <json.hpp>

#include <fstream>

namespace gpmpc {

GpDataset axis_dataset(const ResidualDataset& ds, int axis) {
  GpDataset out;
  out.z.resize(static_cast<Eigen::Index>(ds.size()), 1);
  out.y.resize(static_cast<Eigen::Index>(ds.size()));
  for (size_t i = 0; i < ds.size(); ++i) {
    out.z(static_cast<Eigen::Index>(i), 0) = ds.rows[i].v_body[axis];
    out.y[static_cast<Eigen::Index>(i)] = ds.rows[i].a_err_body[axis];
  }
  return out;
}

Vec3 gp_accel_correction(const GpCorrection& corr, const QuadState& x) {
  const Vec3 v_b = x.body_velocity();
  return Vec3(corr.axis[0].predict_mean_1d(v_b.x()), corr.axis[1].predict_mean_1d(v_b.y()),
              corr.axis[2].predict_mean_1d(v_b.z()));
}

void gp_correction_value_grad(const GpCorrection& corr, const Vec3& v_body, Vec3& value,
                              Vec3& dvalue) {
  for (int i = 0; i < 3; ++i) corr.axis[i].predict_mean_grad_1d(v_body[i], value[i], dvalue[i]);
}

StateDerivative f_corrected(const QuadState& x, const RotorThrusts& u,
                            const QuadParams& params, const GpCorrection& corr) {
  StateDerivative d = f_dyn(x, u, params);
  d.dv += quat_rotate(x.q, gp_accel_correction(corr, x));
  return d;
}

StateDerivative f_rdrv(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
                       const RdrvModel& model) {
  StateDerivative d = f_dyn(x, u, params);
  const Vec3 v_b = x.body_velocity();
  d.dv += quat_rotate(x.q, (-model.drag_coeffs).cwiseProduct(v_b));
  return d;
}

namespace {

// Jacobian blocks of a_world(q, v) = R(q) h(R(q)^T v) for a body-frame
// correction h with diagonal derivative dh.
void add_body_correction_jac(const QuadState& x, const Vec3& h, const Vec3& dh,
                             Eigen::Matrix<double, 13, 13>& fx) {
  const Mat3 rot = quat_to_rot_matrix(x.q);
  const Mat3 dhm = dh.asDiagonal();
  fx.block<3, 4>(7, 3) +=
      quat_rotate_jac_q(x.q, h) + rot * dhm * quat_rotate_conj_jac_q(x.q, x.v);
  fx.block<3, 3>(7, 7) += rot * dhm * rot.transpose();
}

}  // namespace

void f_corrected_jac(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
                     const GpCorrection& corr, Eigen::Matrix<double, 13, 13>& fx,
                     Eigen::Matrix<double, 13, 4>& fu) {
  f_dyn_jac(x, u, params, fx, fu);
  Vec3 h, dh;
  gp_correction_value_grad(corr, x.body_velocity(), h, dh);
  add_body_correction_jac(x, h, dh, fx);
}

void f_rdrv_jac(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
                const RdrvModel& model, Eigen::Matrix<double, 13, 13>& fx,
                Eigen::Matrix<double, 13, 4>& fu) {
  f_dyn_jac(x, u, params, fx, fu);
  const Vec3 v_b = x.body_velocity();
  add_body_correction_jac(x, (-model.drag_coeffs).cwiseProduct(v_b), -model.drag_coeffs, fx);
}

RdrvModel fit_rdrv(const ResidualDataset& ds, std::vector<std::string>* warnings) {
  RdrvModel model;
  for (int axis = 0; axis < 3; ++axis) {
    double vv = 0.0, va = 0.0;
    for (const auto& r : ds.rows) {
      vv += r.v_body[axis] * r.v_body[axis];
      va += r.v_body[axis] * r.a_err_body[axis];
    }
    if (vv == 0.0) {
      if (warnings)
        warnings->push_back("fit_rdrv: axis " + std::to_string(axis) +
                            " has no velocity excitation, coefficient set to 0");
      model.drag_coeffs[axis] = 0.0;
      continue;
    }
    model.drag_coeffs[axis] = std::max(-va / vv, 0.0);
  }
  return model;
}

GpCorrection fit_gp_correction(const ResidualDataset& data, const GpTrainOptions& opt,
                               const std::array<RbfHyperparams, 3>* fixed_hyper,
                               std::array<RbfHyperparams, 3>* out_hyper) {
  if (data.size() < 2) throw FitError("fit_gp_correction: need at least 2 rows");
  GpCorrection corr;
  for (int axis = 0; axis < 3; ++axis) {
    const GpDataset full = axis_dataset(data, axis);
    const GpDataset inducing = select_inducing_points(full, opt.n_inducing);
    RbfHyperparams hyper;
    if (fixed_hyper) {
      hyper = (*fixed_hyper)[axis];
    } else {
      // maximum likelihood on the selected points; a small regular subsample
      // is joined in when the inducing set alone is too thin to identify the
      // noise level
      GpDataset ml_set = inducing;
      const int min_ml = std::min<int>(opt.hyper_subsample, static_cast<int>(full.size()));
      if (static_cast<int>(ml_set.size()) < min_ml)
        ml_set = select_inducing_points(full, min_ml);
      const double span =
          std::max(full.z.col(0).maxCoeff() - full.z.col(0).minCoeff(), 1e-3);
      const double y_std =
          std::max(std::sqrt((full.y.array() - full.y.mean()).square().mean()), 1e-4);
      const RbfHyperparams init =
          RbfHyperparams::isotropic(1, 0.2 * span, y_std, 0.2 * y_std);
      hyper = optimize_hyperparams(ml_set, init, opt.hyper_budget);
    }
    corr.axis[axis] = GpAxisModel::fit(inducing, hyper);
    if (out_hyper) (*out_hyper)[axis] = hyper;
  }
  return corr;
}

void save_rdrv(const RdrvModel& m, const std::string& path) {
  nlohmann::json j;
  j["kind"] = "rdrv";
  j["version"] = 1;
  j["drag_coeffs"] = {m.drag_coeffs.x(), m.drag_coeffs.y(), m.drag_coeffs.z()};
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_rdrv: cannot open " + path);
  f << j.dump(2) << "\n";
}

RdrvModel load_rdrv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_rdrv: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  if (j.value("kind", "") != "rdrv") throw std::runtime_error(path + ": not an rdrv model");
  RdrvModel m;
  const auto d = j.at("drag_coeffs").get<std::vector<double>>();
  if (d.size() != 3) throw std::runtime_error(path + ": drag_coeffs must have 3 entries");
  m.drag_coeffs = Vec3(d[0], d[1], d[2]);
  if (m.drag_coeffs.minCoeff() < 0.0)
    throw std::runtime_error(path + ": drag coefficients must be nonnegative");
  return m;
}

void save_gp_correction(const GpCorrection& m, const std::string& path) {
  nlohmann::json j;
  j["kind"] = "gp_correction";
  j["version"] = 1;
  const char* names[3] = {"x", "y", "z"};
  for (int i = 0; i < 3; ++i) j[names[i]] = nlohmann::json::parse(gp_to_json(m.axis[i]));
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_gp_correction: cannot open " + path);
  f << j.dump(2) << "\n";
}

GpCorrection load_gp_correction(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_gp_correction: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  if (j.value("kind", "") != "gp_correction")
    throw std::runtime_error(path + ": not a gp_correction model");
  GpCorrection m;
  const char* names[3] = {"x", "y", "z"};
  for (int i = 0; i < 3; ++i) m.axis[i] = gp_from_json(j.at(names[i]).dump());
  return m;
}

std::string model_kind(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("model_kind: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  return j.value("kind", "");
}

}  // namespace gpmpc
