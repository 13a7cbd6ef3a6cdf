#include "gpmpc/experiment.hpp"

#include "gpmpc/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <future>
#include <numeric>
#include <ostream>

namespace gpmpc {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index) {
  // splitmix64 over (master, stream, index)
  std::uint64_t z = master + 0x9e3779b97f4a7c15ull * (stream + 1) + 0xbf58476d1ce4e5b9ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

namespace {

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void maybe_vec3(const json& j, const char* key, Vec3& out) {
  if (j.contains(key)) out = vec3_from(j.at(key));
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return from_json_text(text);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  ExperimentConfig cfg;
  // simulator defaults for the drag-and-noise plant: linear rotor drag plus a
  // fuselage term that dominates beyond ~8 m/s
  cfg.sim.drag.lin = Vec3(0.15, 0.15, 0.08);
  cfg.sim.drag.quad = Vec3(0.065, 0.065, 0.045);
  cfg.sim.noise.force_std = 0.03;
  cfg.sim.noise.torque_std = 1e-3;
  cfg.sim.noise.motor_std = 0.02;
  cfg.sim.noise.motor_bias_scale = 0.005;

  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }

  try {
    if (j.contains("quad")) {
      const json& q = j["quad"];
      maybe(q, "mass", cfg.quad.mass);
      maybe_vec3(q, "inertia", cfg.quad.inertia);
      maybe(q, "arm_x", cfg.quad.arm_x);
      maybe(q, "arm_y", cfg.quad.arm_y);
      maybe(q, "torque_const", cfg.quad.torque_const);
      maybe(q, "max_thrust", cfg.quad.max_thrust);
      maybe_vec3(q, "gravity", cfg.quad.gravity);
    }
    if (j.contains("sim")) {
      const json& s = j["sim"];
      maybe(s, "sim_dt", cfg.sim.sim_dt);
      maybe_vec3(s, "drag_lin", cfg.sim.drag.lin);
      maybe_vec3(s, "drag_quad", cfg.sim.drag.quad);
      maybe(s, "drag_quad_y_extra", cfg.sim.drag.quad_y_extra);
      maybe(s, "force_noise_std", cfg.sim.noise.force_std);
      maybe(s, "torque_noise_std", cfg.sim.noise.torque_std);
      maybe(s, "motor_noise_std", cfg.sim.noise.motor_std);
      maybe(s, "motor_bias_scale", cfg.sim.noise.motor_bias_scale);
    }
    if (j.contains("mpc")) {
      const json& m = j["mpc"];
      maybe(m, "horizon", cfg.horizon);
      maybe(m, "horizon_time", cfg.horizon_time);
      maybe(m, "q_pos", cfg.q_pos);
      maybe(m, "q_att", cfg.q_att);
      maybe(m, "q_vel", cfg.q_vel);
      maybe(m, "q_omega", cfg.q_omega);
      maybe(m, "r_thrust", cfg.r_thrust);
      maybe(m, "u_min", cfg.u_min);
      maybe(m, "u_max", cfg.u_max);
      maybe(m, "gp_per_node", cfg.gp_per_node);
      maybe(m, "max_sqp_iters", cfg.max_sqp_iters);
      maybe(m, "line_search", cfg.line_search);
    }
    if (j.contains("control")) maybe(j["control"], "control_dt", cfg.control_dt);
    if (j.contains("trajectories")) {
      const json& t = j["trajectories"];
      if (t.contains("circle")) {
        const json& c = t["circle"];
        maybe(c, "radius", cfg.circle_radius);
        maybe(c, "z0", cfg.circle_z0);
        maybe(c, "duration", cfg.circle_duration);
        maybe(c, "ramp_fraction", cfg.circle_ramp);
      }
      if (t.contains("lemniscate")) {
        const json& l = t["lemniscate"];
        maybe(l, "scale", cfg.lemn_scale);
        maybe(l, "z0", cfg.lemn_z0);
        maybe(l, "duration", cfg.lemn_duration);
        maybe(l, "ramp_fraction", cfg.lemn_ramp);
      }
      if (t.contains("random")) {
        const json& r = t["random"];
        maybe(r, "n_waypoints", cfg.random_params.n_waypoints);
        maybe_vec3(r, "box_min", cfg.random_params.box_min);
        maybe_vec3(r, "box_max", cfg.random_params.box_max);
        maybe(r, "segment_speed", cfg.random_params.segment_speed);
        maybe(r, "axis_speed_cap", cfg.random_params.axis_speed_cap);
        maybe(r, "min_segment_time", cfg.random_params.min_segment_time);
      }
    }
    if (j.contains("collect")) maybe(j["collect"], "n_rollouts", cfg.collect_rollouts);
    if (j.contains("fit")) {
      const json& f = j["fit"];
      maybe(f, "gp_points", cfg.gp_points);
      maybe(f, "holdout_every", cfg.holdout_every);
      maybe(f, "hyper_budget", cfg.hyper_budget);
      maybe(f, "hyper_subsample", cfg.hyper_subsample);
    }
    if (j.contains("evaluate")) {
      const json& e = j["evaluate"];
      maybe(e, "models", cfg.eval_models);
      maybe(e, "trajectories", cfg.eval_trajectories);
      maybe(e, "speeds", cfg.eval_speeds);
    }
    if (j.contains("tradeoff")) {
      const json& t = j["tradeoff"];
      maybe(t, "points", cfg.tradeoff_points);
      maybe(t, "trajectory", cfg.tradeoff_trajectory);
      maybe(t, "speed", cfg.tradeoff_speed);
      maybe(t, "duration", cfg.tradeoff_duration);
    }
    maybe(j, "seed", cfg.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config field error: ") + e.what());
  }

  cfg.validate();
  return cfg;
}

void ExperimentConfig::validate() const {
  quad.validate();
  sim.validate();
  if (horizon < 2) throw ConfigError("mpc.horizon must be >= 2");
  if (!(horizon_time > 0.0)) throw ConfigError("mpc.horizon_time must be positive");
  if (!(control_dt > 0.0)) throw ConfigError("control.control_dt must be positive");

  const double nd = node_dt();
  const double stride = nd / control_dt;
  if (std::abs(stride - std::round(stride)) > 1e-9 || stride < 1.0)
    throw ConfigError("node spacing horizon_time/horizon must be a multiple of control_dt");
  const double sub = control_dt / sim.sim_dt;
  if (std::abs(sub - std::round(sub)) > 1e-9 || sub < 1.0)
    throw ConfigError("control_dt must be a multiple of sim.sim_dt");

  if (!(u_min >= 0.0 && u_min < u_max)) throw ConfigError("need 0 <= mpc.u_min < mpc.u_max");
  if (u_max > quad.max_thrust + 1e-9)
    throw ConfigError("mpc.u_max cannot exceed quad.max_thrust");
  if (eval_models.empty()) throw ConfigError("evaluate.models must not be empty");
  for (const auto& m : eval_models)
    if (m != "ideal" && m != "nominal" && m != "rdrv" && m != "gp")
      throw ConfigError("unknown model in evaluate.models: " + m);
  for (const auto& t : eval_trajectories)
    if (t != "circle" && t != "lemniscate" && t != "random")
      throw ConfigError("unknown trajectory in evaluate.trajectories: " + t);
  for (double v : eval_speeds)
    if (!(v > 0.0)) throw ConfigError("evaluate.speeds must be positive");
  if (gp_points < 2) throw ConfigError("fit.gp_points must be >= 2");
  if (holdout_every < 2) throw ConfigError("fit.holdout_every must be >= 2");
  for (int p : tradeoff_points)
    if (p < 2) throw ConfigError("tradeoff.points entries must be >= 2");
}

MpcProblem ExperimentConfig::make_problem(DynamicsMode mode) const {
  MpcProblem p;
  p.horizon = horizon;
  p.node_dt = node_dt();
  p.Q = MpcProblem::diagonal_weights(q_pos, q_att, q_vel, q_omega);
  p.R = r_thrust * Eigen::Matrix4d::Identity();
  p.u_min = u_min;
  p.u_max = u_max;
  p.params = quad;
  p.mode = std::move(mode);
  return p;
}

SolverSettings ExperimentConfig::make_solver_settings() const {
  SolverSettings s;
  s.max_sqp_iters = max_sqp_iters;
  s.line_search = line_search;
  return s;
}

TrajectorySpec ExperimentConfig::trajectory_spec(const std::string& name, double v_peak,
                                                 std::uint64_t seed_value) const {
  TrajectorySpec s;
  s.v_peak = v_peak;
  s.sample_dt = control_dt;
  if (name == "circle") {
    s.kind = TrajectoryKind::Circle;
    s.scale = circle_radius;
    s.z0 = circle_z0;
    s.duration = circle_duration;
    s.ramp_fraction = circle_ramp;
  } else if (name == "lemniscate") {
    s.kind = TrajectoryKind::Lemniscate;
    s.scale = lemn_scale;
    s.z0 = lemn_z0;
    s.duration = lemn_duration;
    s.ramp_fraction = lemn_ramp;
  } else if (name == "random") {
    s.kind = TrajectoryKind::RandomPoly;
    s.random = random_params;
    s.seed = seed_value;
    s.v_peak = random_params.axis_speed_cap;  // aggressiveness set by the cap, not v_peak
  } else {
    throw ConfigError("unknown trajectory name: " + name);
  }
  return s;
}

SimConfig ExperimentConfig::ideal_sim() const {
  SimConfig s = sim;
  s.drag = DragConfig{};
  s.noise = NoiseConfig{};
  return s;
}

RolloutOptions ExperimentConfig::rollout_options(std::uint64_t seed_value) const {
  RolloutOptions o;
  o.control_dt = control_dt;
  o.seed = seed_value;
  return o;
}

// ---------------------------------------------------------------------------
// collect
// ---------------------------------------------------------------------------

CollectSummary run_collect(const ExperimentConfig& cfg, const std::string& out_dir,
                           std::ostream& log) {
  fs::create_directories(out_dir);
  const MpcProblem prob = cfg.make_problem(NominalMode{});
  const SolverSettings settings = cfg.make_solver_settings();

  CollectSummary sum;
  sum.rollouts = cfg.collect_rollouts;
  ResidualDataset all;
  bool first_row = true;
  for (int i = 0; i < cfg.collect_rollouts; ++i) {
    const auto spec =
        cfg.trajectory_spec("random", 0.0, derive_seed(cfg.seed, 1, static_cast<unsigned>(i)));
    const auto traj = random_polynomial(spec, cfg.quad);
    const auto opt = cfg.rollout_options(derive_seed(cfg.seed, 2, static_cast<unsigned>(i)));
    const auto rollout = run_closed_loop(traj, prob, settings, cfg.sim, opt);
    if (rollout.crashed) {
      ++sum.crashed;
      log << "collect: rollout " << i << " crashed (" << rollout.crash_reason << "), "
          << rollout.log.size() << " records kept\n";
    }
    const auto ds = build_residuals(rollout.log);
    for (const auto& row : ds.rows) {
      if (first_row) {
        sum.v_body_min = sum.v_body_max = row.v_body;
        first_row = false;
      }
      sum.v_body_min = sum.v_body_min.cwiseMin(row.v_body);
      sum.v_body_max = sum.v_body_max.cwiseMax(row.v_body);
      all.rows.push_back(row);
    }
    log << "collect: rollout " << i << " duration " << traj.duration() << " s, max speed "
        << rollout.max_speed << " m/s, " << ds.size() << " residual rows\n";
  }
  sum.rows = all.size();
  sum.dataset_path = (fs::path(out_dir) / "dataset.csv").string();
  save_dataset(all, sum.dataset_path);
  log << "collect: wrote " << sum.rows << " rows to " << sum.dataset_path
      << " (v_body range x[" << sum.v_body_min.x() << "," << sum.v_body_max.x() << "] y["
      << sum.v_body_min.y() << "," << sum.v_body_max.y() << "] z[" << sum.v_body_min.z()
      << "," << sum.v_body_max.z() << "])\n";
  return sum;
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

namespace {

void split_dataset(const ResidualDataset& all, int holdout_every, ResidualDataset& train,
                   ResidualDataset& holdout) {
  for (size_t i = 0; i < all.size(); ++i) {
    if ((i + 1) % static_cast<size_t>(holdout_every) == 0)
      holdout.rows.push_back(all.rows[i]);
    else
      train.rows.push_back(all.rows[i]);
  }
}

double holdout_rmse_rdrv(const RdrvModel& m, const ResidualDataset& holdout) {
  double sq = 0.0;
  for (const auto& r : holdout.rows)
    sq += ((-m.drag_coeffs).cwiseProduct(r.v_body) - r.a_err_body).squaredNorm();
  return std::sqrt(sq / (3.0 * static_cast<double>(holdout.size())));
}

double holdout_rmse_gp(const GpCorrection& gp, const ResidualDataset& holdout) {
  double sq = 0.0;
  for (const auto& r : holdout.rows) {
    for (int axis = 0; axis < 3; ++axis) {
      const double pred = gp.axis[axis].predict_mean_1d(r.v_body[axis]);
      const double err = pred - r.a_err_body[axis];
      sq += err * err;
    }
  }
  return std::sqrt(sq / (3.0 * static_cast<double>(holdout.size())));
}

}  // namespace

FitSummary run_fit(const ExperimentConfig& cfg, const std::string& dataset_path,
                   const std::string& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  const ResidualDataset all = load_dataset(dataset_path);
  if (all.size() < 20) throw ConfigError("fit: dataset too small: " + dataset_path);

  ResidualDataset train, holdout;
  split_dataset(all, cfg.holdout_every, train, holdout);

  FitSummary sum;
  sum.n_train = train.size();
  sum.n_holdout = holdout.size();

  std::vector<std::string> warnings;
  sum.rdrv = fit_rdrv(train, &warnings);
  for (const auto& w : warnings) log << "fit: " << w << "\n";

  GpTrainOptions opts;
  opts.n_inducing = cfg.gp_points;
  opts.hyper_budget = cfg.hyper_budget;
  opts.hyper_subsample = cfg.hyper_subsample;
  sum.gp = fit_gp_correction(train, opts);

  sum.rdrv_holdout_rmse = holdout_rmse_rdrv(sum.rdrv, holdout);
  sum.gp_holdout_rmse = holdout_rmse_gp(sum.gp, holdout);

  sum.rdrv_path = (fs::path(out_dir) / "rdrv.json").string();
  sum.gp_path = (fs::path(out_dir) / "gp_correction.json").string();
  save_rdrv(sum.rdrv, sum.rdrv_path);
  save_gp_correction(sum.gp, sum.gp_path);

  CsvWriter report((fs::path(out_dir) / "fit_report.csv").string());
  report.header("model,n_train,n_holdout,holdout_rmse_mps2");
  report.raw_row("rdrv," + std::to_string(sum.n_train) + "," + std::to_string(sum.n_holdout) +
                 "," + format_double(sum.rdrv_holdout_rmse));
  report.raw_row("gp," + std::to_string(sum.n_train) + "," + std::to_string(sum.n_holdout) +
                 "," + format_double(sum.gp_holdout_rmse));

  log << "fit: rdrv coefficients " << sum.rdrv.drag_coeffs.transpose() << "\n";
  log << "fit: held-out one-step prediction RMSE rdrv=" << sum.rdrv_holdout_rmse
      << " m/s^2, gp(" << cfg.gp_points << ")=" << sum.gp_holdout_rmse << " m/s^2\n";
  return sum;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

namespace {

struct EvalCell {
  std::string scenario;
  std::string model;
  double v_peak;
  std::uint64_t seed;
};

}  // namespace

std::vector<EvalRow> run_evaluate(const ExperimentConfig& cfg, const std::string& models_dir,
                                  const std::string& out_dir, std::ostream& log, int jobs) {
  fs::create_directories(out_dir);

  const bool needs_gp =
      std::count(cfg.eval_models.begin(), cfg.eval_models.end(), "gp") > 0;
  const bool needs_rdrv =
      std::count(cfg.eval_models.begin(), cfg.eval_models.end(), "rdrv") > 0;
  GpCorrection gp;
  RdrvModel rdrv;
  if (needs_gp) gp = load_gp_correction((fs::path(models_dir) / "gp_correction.json").string());
  if (needs_rdrv) rdrv = load_rdrv((fs::path(models_dir) / "rdrv.json").string());

  // Pre-generate the reference trajectories (shared across models).
  std::vector<std::pair<std::string, double>> scenarios;
  std::vector<ReferenceTrajectory> trajs;
  for (const auto& name : cfg.eval_trajectories)
    for (double v : cfg.eval_speeds) {
      scenarios.emplace_back(name, v);
      trajs.push_back(generate_trajectory(
          cfg.trajectory_spec(name, v, derive_seed(cfg.seed, 5, trajs.size())), cfg.quad));
    }

  std::vector<EvalCell> cells;
  for (size_t s = 0; s < scenarios.size(); ++s)
    for (const auto& model : cfg.eval_models)
      cells.push_back(
          {scenarios[s].first, model, scenarios[s].second, derive_seed(cfg.seed, 3, s)});

  std::vector<EvalRow> rows(cells.size());
  auto run_cell = [&](size_t idx) {
    const EvalCell& cell = cells[idx];
    const size_t scenario_idx =
        std::distance(scenarios.begin(),
                      std::find(scenarios.begin(), scenarios.end(),
                                std::make_pair(cell.scenario, cell.v_peak)));
    DynamicsMode mode = NominalMode{};
    SimConfig sim_cfg = cfg.sim;
    if (cell.model == "ideal") {
      sim_cfg = cfg.ideal_sim();
    } else if (cell.model == "rdrv") {
      mode = RdrvMode{rdrv};
    } else if (cell.model == "gp") {
      mode = GpMode{gp, cfg.gp_per_node};
    }
    EvalRow row;
    row.scenario = cell.scenario;
    row.model = cell.model;
    row.v_peak = cell.v_peak;
    row.rollout = run_closed_loop(trajs[scenario_idx], cfg.make_problem(std::move(mode)),
                                  cfg.make_solver_settings(), sim_cfg,
                                  cfg.rollout_options(cell.seed));
    row.rmse = row.rollout.rmse;
    row.solve_ms_mean = row.rollout.mean_solve_ms;
    row.crashed = row.rollout.crashed;
    rows[idx] = std::move(row);
  };

  if (jobs <= 1) {
    for (size_t i = 0; i < cells.size(); ++i) run_cell(i);
  } else {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
      for (size_t i = next++; i < cells.size(); i = next++) run_cell(i);
    };
    std::vector<std::future<void>> futs;
    const int n_workers = std::min<int>(jobs, static_cast<int>(cells.size()));
    for (int w = 0; w < n_workers; ++w)
      futs.push_back(std::async(std::launch::async, worker));
    for (auto& f : futs) f.get();
  }

  // improvement vs the nominal run of the same scenario cell
  for (auto& row : rows) {
    if (row.model == "nominal") continue;
    for (const auto& nom : rows)
      if (nom.model == "nominal" && nom.scenario == row.scenario && nom.v_peak == row.v_peak &&
          nom.rmse > 0.0)
        row.improvement_pct = 100.0 * (1.0 - row.rmse / nom.rmse);
  }

  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return std::tie(a.scenario, a.v_peak, a.model) < std::tie(b.scenario, b.v_peak, b.model);
  });

  CsvWriter results((fs::path(out_dir) / "results.csv").string());
  results.header("scenario,model,v_peak,rmse_m,solve_time_ms_mean,crashed");
  for (const auto& r : rows)
    results.raw_row(r.scenario + "," + r.model + "," + format_double(r.v_peak) + "," +
                    format_double(r.rmse) + "," + format_double(r.solve_ms_mean) + "," +
                    (r.crashed ? "1" : "0"));

  CsvWriter summary((fs::path(out_dir) / "summary.csv").string());
  summary.header("scenario,model,v_peak,rmse_m,improvement_pct_vs_nominal,crashed");
  for (const auto& r : rows)
    summary.raw_row(r.scenario + "," + r.model + "," + format_double(r.v_peak) + "," +
                    format_double(r.rmse) + "," + format_double(r.improvement_pct) + "," +
                    (r.crashed ? "1" : "0"));

  CsvWriter telemetry((fs::path(out_dir) / "telemetry.csv").string());
  telemetry.header("scenario,model,v_peak,t,solve_ms,kkt,sqp_iters");
  for (const auto& r : rows)
    for (const auto& tick : r.rollout.ticks)
      telemetry.raw_row(r.scenario + "," + r.model + "," + format_double(r.v_peak) + "," +
                        format_double(tick.t) + "," + format_double(tick.solve_ms) + "," +
                        format_double(tick.kkt) + "," + std::to_string(tick.sqp_iters));

  for (const auto& r : rows)
    log << "evaluate: " << r.scenario << " v=" << r.v_peak << " " << r.model
        << " rmse=" << r.rmse << " m (" << r.improvement_pct << "% vs nominal), solve "
        << r.solve_ms_mean << " ms" << (r.crashed ? " CRASHED" : "") << "\n";
  return rows;
}

// ---------------------------------------------------------------------------
// tradeoff
// ---------------------------------------------------------------------------

std::vector<TradeoffRow> run_tradeoff(const ExperimentConfig& cfg,
                                      const std::string& dataset_path,
                                      const std::string& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  const ResidualDataset all = load_dataset(dataset_path);
  if (all.size() < 20) throw ConfigError("tradeoff: dataset too small: " + dataset_path);
  ResidualDataset train, holdout;
  split_dataset(all, cfg.holdout_every, train, holdout);

  // Hyperparameters are fitted once on the regular subsample and shared
  // across sizes, so the sweep isolates the inducing point count.
  GpTrainOptions opts;
  opts.n_inducing = cfg.gp_points;
  opts.hyper_budget = cfg.hyper_budget;
  opts.hyper_subsample = cfg.hyper_subsample;
  std::array<RbfHyperparams, 3> hyper;
  fit_gp_correction(train, opts, nullptr, &hyper);

  const auto traj = generate_trajectory(
      cfg.trajectory_spec(cfg.tradeoff_trajectory, cfg.tradeoff_speed, derive_seed(cfg.seed, 6, 0)),
      cfg.quad);
  ReferenceTrajectory bench = traj;
  if (bench.duration() > cfg.tradeoff_duration) {
    const size_t keep =
        static_cast<size_t>(std::lround(cfg.tradeoff_duration / bench.sample_dt)) + 1;
    bench.samples.resize(std::min(bench.samples.size(), keep));
  }

  std::vector<TradeoffRow> rows;
  {
    TradeoffRow nom;
    nom.model = "nominal";
    nom.n_points = 0;
    const auto r = run_closed_loop(bench, cfg.make_problem(NominalMode{}),
                                   cfg.make_solver_settings(), cfg.sim,
                                   cfg.rollout_options(derive_seed(cfg.seed, 4, 0)));
    nom.solve_ms_mean = r.mean_solve_ms;
    rows.push_back(nom);
    log << "tradeoff: nominal solve " << nom.solve_ms_mean << " ms\n";
  }
  for (int n : cfg.tradeoff_points) {
    GpTrainOptions o = opts;
    o.n_inducing = n;
    const GpCorrection gp = fit_gp_correction(train, o, &hyper);
    TradeoffRow row;
    row.model = "gp";
    row.n_points = n;
    row.pred_rmse = holdout_rmse_gp(gp, holdout);
    const auto r = run_closed_loop(bench, cfg.make_problem(GpMode{gp, cfg.gp_per_node}),
                                   cfg.make_solver_settings(), cfg.sim,
                                   cfg.rollout_options(derive_seed(cfg.seed, 4, 0)));
    row.solve_ms_mean = r.mean_solve_ms;
    rows.push_back(row);
    log << "tradeoff: gp(" << n << ") pred rmse " << row.pred_rmse << " m/s^2, solve "
        << row.solve_ms_mean << " ms\n";
  }

  CsvWriter csv((fs::path(out_dir) / "tradeoff.csv").string());
  csv.header("model,n_points,pred_rmse_mps2,solve_time_ms_mean");
  for (const auto& r : rows)
    csv.raw_row(r.model + "," + std::to_string(r.n_points) + "," + format_double(r.pred_rmse) +
                "," + format_double(r.solve_ms_mean));
  return rows;
}

// ---------------------------------------------------------------------------
// replay
// ---------------------------------------------------------------------------

RolloutResult run_replay(const ExperimentConfig& cfg, const std::string& trajectory,
                         double v_peak, const std::string& model,
                         const std::string& models_dir, const std::string& out_dir,
                         std::ostream& log) {
  fs::create_directories(out_dir);
  const auto traj = generate_trajectory(
      cfg.trajectory_spec(trajectory, v_peak, derive_seed(cfg.seed, 7, 0)), cfg.quad);

  DynamicsMode mode = NominalMode{};
  SimConfig sim_cfg = cfg.sim;
  if (model == "ideal") {
    sim_cfg = cfg.ideal_sim();
  } else if (model == "rdrv") {
    mode = RdrvMode{load_rdrv((fs::path(models_dir) / "rdrv.json").string())};
  } else if (model == "gp") {
    mode = GpMode{load_gp_correction((fs::path(models_dir) / "gp_correction.json").string()),
                  cfg.gp_per_node};
  } else if (model != "nominal") {
    throw ConfigError("unknown model: " + model);
  }

  const auto rollout =
      run_closed_loop(traj, cfg.make_problem(std::move(mode)), cfg.make_solver_settings(),
                      sim_cfg, cfg.rollout_options(derive_seed(cfg.seed, 8, 0)));

  save_trajectory_csv(traj, (fs::path(out_dir) / "reference.csv").string());
  ReferenceTrajectory flown;
  flown.sample_dt = cfg.control_dt;
  for (const auto& rec : rollout.log)
    flown.samples.push_back(RefSample{rec.t, rec.x, rec.u});
  save_trajectory_csv(flown, (fs::path(out_dir) / "flown.csv").string());
  save_dataset(build_residuals(rollout.log), (fs::path(out_dir) / "residuals.csv").string());

  log << "replay: " << trajectory << " v=" << v_peak << " " << model << " rmse=" << rollout.rmse
      << " m over " << rollout.ticks.size() << " ticks"
      << (rollout.crashed ? " CRASHED: " + rollout.crash_reason : "") << "\n";
  return rollout;
}

bool csv_equal_ignoring(const std::string& path_a, const std::string& path_b,
                        const std::vector<std::string>& ignore_columns) {
  std::ifstream fa(path_a), fb(path_b);
  if (!fa || !fb) return false;
  std::string ha, hb;
  if (!std::getline(fa, ha) || !std::getline(fb, hb) || ha != hb) return false;
  std::vector<bool> ignore;
  {
    const auto cols = split_csv_line(ha);
    ignore.resize(cols.size(), false);
    for (size_t i = 0; i < cols.size(); ++i)
      for (const auto& name : ignore_columns)
        if (cols[i] == name) ignore[i] = true;
  }
  std::string la, lb;
  while (true) {
    const bool ga = static_cast<bool>(std::getline(fa, la));
    const bool gb = static_cast<bool>(std::getline(fb, lb));
    if (ga != gb) return false;
    if (!ga) return true;
    if (la == lb) continue;
    const auto ca = split_csv_line(la);
    const auto cb = split_csv_line(lb);
    if (ca.size() != cb.size() || ca.size() != ignore.size()) return false;
    for (size_t i = 0; i < ca.size(); ++i)
      if (!ignore[i] && ca[i] != cb[i]) return false;
  }
}

}  // namespace gpmpc
