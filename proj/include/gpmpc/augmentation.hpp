#pragma once

#include "gpmpc/gp.hpp"
#include "gpmpc/quad_model.hpp"
#include "gpmpc/residual_dataset.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace gpmpc {

/**
 * Axis-wise GP correction of the translational dynamics: three independent
 * 1-D models mapping one body-frame velocity component [m/s] to the
 * acceleration error on the same body axis [m/s^2]. The state selection is
 * fixed by construction: features are the body-velocity components and the
 * correction enters only the velocity-derivative rows.
 */
struct GpCorrection {
  std::array<GpAxisModel, 3> axis;

  const GpAxisModel& x() const { return axis[0]; }
  const GpAxisModel& y() const { return axis[1]; }
  const GpAxisModel& z() const { return axis[2]; }
};

/// Diagonal linear body-drag coefficients [1/s], all >= 0.
struct RdrvModel {
  Vec3 drag_coeffs = Vec3::Zero();
};

/// Extracts the 1-D per-axis training set (v_body[axis] -> a_err_body[axis]).
GpDataset axis_dataset(const ResidualDataset& ds, int axis);

/// GP acceleration correction in the body frame at the state's velocity.
Vec3 gp_accel_correction(const GpCorrection& corr, const QuadState& x);

/// Correction value and per-axis derivative at a body velocity; used by the
/// dynamics linearization.
void gp_correction_value_grad(const GpCorrection& corr, const Vec3& v_body, Vec3& value,
                              Vec3& dvalue);

/// Nominal dynamics plus the GP correction rotated into the world frame;
/// only the velocity derivative changes.
StateDerivative f_corrected(const QuadState& x, const RotorThrusts& u,
                            const QuadParams& params, const GpCorrection& corr);

/// Nominal dynamics plus linear body drag -D v_body.
StateDerivative f_rdrv(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
                       const RdrvModel& model);

/// Analytic Jacobians of the corrected vector fields (ambient coordinates).
void f_corrected_jac(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
                     const GpCorrection& corr, Eigen::Matrix<double, 13, 13>& fx,
                     Eigen::Matrix<double, 13, 4>& fu);
void f_rdrv_jac(const QuadState& x, const RotorThrusts& u, const QuadParams& params,
                const RdrvModel& model, Eigen::Matrix<double, 13, 13>& fx,
                Eigen::Matrix<double, 13, 4>& fu);

/**
 * Per-axis scalar least squares of a_err = -D v on the body axes. Negative
 * fits clamp to zero; an axis without velocity excitation gets coefficient 0
 * and a warning.
 */
RdrvModel fit_rdrv(const ResidualDataset& ds, std::vector<std::string>* warnings = nullptr);

struct GpTrainOptions {
  int n_inducing = 20;
  int hyper_budget = 240;    // likelihood evaluations per axis
  int hyper_subsample = 20;  // minimum rows for the likelihood fit
};

/**
 * Full per-axis training pipeline: regular-interval inducing point selection,
 * maximum-likelihood hyperparameters (on a regular subsample), final fit.
 * `fixed_hyper` skips the ML stage (used when sweeping inducing counts);
 * `out_hyper` reports the hyperparameters that were used.
 */
GpCorrection fit_gp_correction(const ResidualDataset& data, const GpTrainOptions& opt,
                               const std::array<RbfHyperparams, 3>* fixed_hyper = nullptr,
                               std::array<RbfHyperparams, 3>* out_hyper = nullptr);

/// Model files carry a kind tag ("rdrv" / "gp_correction").
void save_rdrv(const RdrvModel& m, const std::string& path);
RdrvModel load_rdrv(const std::string& path);
void save_gp_correction(const GpCorrection& m, const std::string& path);
GpCorrection load_gp_correction(const std::string& path);
std::string model_kind(const std::string& path);

}  // namespace gpmpc
