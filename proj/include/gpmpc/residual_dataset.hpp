#pragma once

#include "gpmpc/quad_model.hpp"

#include <span>
#include <string>
#include <vector>

namespace gpmpc {

/// One controller-rate sample of a flight: state, applied input, the nominal
/// model's one-step velocity prediction and the step to the next sample.
struct FlightLogRecord {
  double t = 0.0;            // [s]
  QuadState x;
  RotorThrusts u = RotorThrusts::Zero();
  Vec3 v_pred_next = Vec3::Zero();  // predicted world velocity at t + dt
  double dt = 0.0;           // [s]
};

/// Body-frame velocity feature and time-normalized velocity error target.
struct ResidualRow {
  double t = 0.0;
  Vec3 v_body = Vec3::Zero();    // [m/s]
  Vec3 a_err_body = Vec3::Zero();  // [m/s^2]
  double dt = 0.0;
};

struct ResidualDataset {
  std::vector<ResidualRow> rows;

  size_t size() const { return rows.size(); }
};

struct ResidualBuildStats {
  int rejected = 0;
};

/**
 * Builds the residual dataset from consecutive log pairs. Measured and
 * predicted next-sample velocities are both rotated into the body frame of
 * sample k's attitude before differencing, so feature and target share one
 * frame. Rows with non-monotone time or dt <= 0 are dropped and counted.
 */
ResidualDataset build_residuals(std::span<const FlightLogRecord> log,
                                ResidualBuildStats* stats = nullptr);

/// Fills v_pred_next on every record from the nominal one-step model;
/// utility for logs recorded without predictions.
void recompute_predictions(std::vector<FlightLogRecord>& log, const QuadParams& params);

/// CSV persistence, header `t,vx_b,vy_b,vz_b,ae_x,ae_y,ae_z,dt`. Lossless
/// round trip; malformed files raise ParseError with the offending line.
void save_dataset(const ResidualDataset& ds, const std::string& path);
ResidualDataset load_dataset(const std::string& path);

}  // namespace gpmpc
