#pragma once

#include "gpmpc/augmentation.hpp"
#include "gpmpc/sim.hpp"
#include "gpmpc/trajectory.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gpmpc {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic per-purpose seed stream derived from the master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream, std::uint64_t index);

/**
 * Benchmark configuration: quad parameters, ground-truth simulator, MPC
 * weights and the experiment matrix. Loadable from a JSON file where any
 * subset of keys overrides the defaults (see README for the schema).
 */
struct ExperimentConfig {
  QuadParams quad;
  SimConfig sim;

  // MPC
  int horizon = 20;
  double horizon_time = 1.0;  // [s]
  double q_pos = 100.0, q_att = 5.0, q_vel = 4.0, q_omega = 0.1;
  double r_thrust = 0.25;
  double u_min = 0.0;
  double u_max = 9.81;
  bool gp_per_node = false;  // hold the GP correction per shooting node
  int max_sqp_iters = 1;
  bool line_search = false;

  double control_dt = 0.01;

  // trajectories
  double circle_radius = 5.0, circle_z0 = 3.0, circle_duration = 18.0, circle_ramp = 0.3;
  double lemn_scale = 5.0, lemn_z0 = 3.0, lemn_duration = 18.0, lemn_ramp = 0.3;
  RandomPolyParams random_params;

  // pipeline stages
  int collect_rollouts = 5;
  int gp_points = 20;
  int holdout_every = 5;  // every n-th residual row is held out
  int hyper_budget = 240;
  int hyper_subsample = 20;
  std::vector<std::string> eval_models{"ideal", "nominal", "rdrv", "gp"};
  std::vector<std::string> eval_trajectories{"circle", "lemniscate"};
  std::vector<double> eval_speeds{4.0, 8.0, 12.0};
  std::vector<int> tradeoff_points{3, 5, 10, 15, 20, 40, 75, 100};
  std::string tradeoff_trajectory = "circle";
  double tradeoff_speed = 8.0;
  double tradeoff_duration = 8.0;

  std::uint64_t seed = 1000;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);
  void validate() const;

  double node_dt() const { return horizon_time / horizon; }
  MpcProblem make_problem(DynamicsMode mode) const;
  SolverSettings make_solver_settings() const;
  TrajectorySpec trajectory_spec(const std::string& name, double v_peak,
                                 std::uint64_t seed_value = 0) const;
  SimConfig ideal_sim() const;  // disturbance-free copy
  RolloutOptions rollout_options(std::uint64_t seed_value) const;
};

struct CollectSummary {
  std::string dataset_path;
  std::size_t rows = 0;
  int rollouts = 0;
  int crashed = 0;
  Vec3 v_body_min = Vec3::Zero(), v_body_max = Vec3::Zero();
};

/// Nominal-MPC rollouts on seeded random polynomials; writes
/// <out_dir>/dataset.csv in the residual schema.
CollectSummary run_collect(const ExperimentConfig& cfg, const std::string& out_dir,
                           std::ostream& log);

struct FitSummary {
  std::string rdrv_path, gp_path;
  double rdrv_holdout_rmse = 0.0;  // [m/s^2]
  double gp_holdout_rmse = 0.0;    // [m/s^2]
  std::size_t n_train = 0, n_holdout = 0;
  RdrvModel rdrv;
  GpCorrection gp;
};

/// Fits RDRv (least squares) and the per-axis GPs (inducing selection,
/// ML hyperparameters, final fit) on the dataset; writes model files and a
/// fit report with held-out one-step prediction RMSE.
FitSummary run_fit(const ExperimentConfig& cfg, const std::string& dataset_path,
                   const std::string& out_dir, std::ostream& log);

struct EvalRow {
  std::string scenario;  // trajectory name
  std::string model;
  double v_peak = 0.0;
  double rmse = 0.0;
  double solve_ms_mean = 0.0;
  bool crashed = false;
  double improvement_pct = 0.0;  // vs the nominal row of the same scenario cell
  RolloutResult rollout;
};

/// The full {trajectory x speed x model} matrix, one seeded rollout per cell;
/// every model sees the same disturbance realization within a cell. Writes
/// results.csv (pinned schema) and summary.csv (with improvement columns).
std::vector<EvalRow> run_evaluate(const ExperimentConfig& cfg, const std::string& models_dir,
                                  const std::string& out_dir, std::ostream& log, int jobs = 1);

struct TradeoffRow {
  std::string model;  // "nominal" or "gp"
  int n_points = 0;
  double pred_rmse = 0.0;     // held-out [m/s^2]; 0 for the nominal row
  double solve_ms_mean = 0.0;
};

/// Sweeps the inducing point count: held-out prediction RMSE and mean MPC
/// solve time per size, plus the nominal-MPC baseline time.
std::vector<TradeoffRow> run_tradeoff(const ExperimentConfig& cfg,
                                      const std::string& dataset_path,
                                      const std::string& out_dir, std::ostream& log);

/// Replays one scenario with one model and writes reference.csv, flown.csv
/// and residuals.csv into out_dir. Returns the rollout.
RolloutResult run_replay(const ExperimentConfig& cfg, const std::string& trajectory,
                         double v_peak, const std::string& model,
                         const std::string& models_dir, const std::string& out_dir,
                         std::ostream& log);

/// Compares two CSV files, optionally ignoring named columns (used for the
/// timing column whose value is hardware noise).
bool csv_equal_ignoring(const std::string& path_a, const std::string& path_b,
                        const std::vector<std::string>& ignore_columns);

}  // namespace gpmpc
