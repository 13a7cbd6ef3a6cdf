#include "gpmpc/residual_dataset.hpp"

#include "gpmpc/csv.hpp"

namespace gpmpc {

ResidualDataset build_residuals(std::span<const FlightLogRecord> log,
                                ResidualBuildStats* stats) {
  ResidualDataset ds;
  int rejected = 0;
  for (size_t k = 0; k + 1 < log.size(); ++k) {
    const FlightLogRecord& rec = log[k];
    const FlightLogRecord& next = log[k + 1];
    if (!(next.t > rec.t) || !(rec.dt > 0.0)) {
      ++rejected;
      continue;
    }
    const Quat q_inv = quat_conjugate(rec.x.q);
    ResidualRow row;
    row.t = rec.t;
    row.dt = rec.dt;
    row.v_body = quat_rotate(q_inv, rec.x.v);
    const Vec3 v_meas_b = quat_rotate(q_inv, next.x.v);
    const Vec3 v_pred_b = quat_rotate(q_inv, rec.v_pred_next);
    row.a_err_body = (v_meas_b - v_pred_b) / rec.dt;
    ds.rows.push_back(row);
  }
  if (stats) stats->rejected = rejected;
  return ds;
}

void recompute_predictions(std::vector<FlightLogRecord>& log, const QuadParams& params) {
  for (auto& rec : log) {
    if (!(rec.dt > 0.0)) continue;
    rec.v_pred_next = rk4_step_nominal(rec.x, rec.u, rec.dt, params).v;
  }
}

static const char* kDatasetHeader = "t,vx_b,vy_b,vz_b,ae_x,ae_y,ae_z,dt";

void save_dataset(const ResidualDataset& ds, const std::string& path) {
  CsvWriter w(path);
  w.header(kDatasetHeader);
  for (const auto& r : ds.rows)
    w.row({r.t, r.v_body.x(), r.v_body.y(), r.v_body.z(), r.a_err_body.x(),
           r.a_err_body.y(), r.a_err_body.z(), r.dt});
}

ResidualDataset load_dataset(const std::string& path) {
  ResidualDataset ds;
  read_csv(path, kDatasetHeader, [&](int lineno, const std::vector<std::string_view>& f) {
    const std::string ctx = path + ":" + std::to_string(lineno);
    if (f.size() != 8) throw ParseError(ctx + ": expected 8 fields, got " +
                                        std::to_string(f.size()));
    ResidualRow r;
    r.t = parse_double(f[0], ctx);
    r.v_body = Vec3(parse_double(f[1], ctx), parse_double(f[2], ctx), parse_double(f[3], ctx));
    r.a_err_body =
        Vec3(parse_double(f[4], ctx), parse_double(f[5], ctx), parse_double(f[6], ctx));
    r.dt = parse_double(f[7], ctx);
    ds.rows.push_back(r);
  });
  return ds;
}

}  // namespace gpmpc
