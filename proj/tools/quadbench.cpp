// Benchmark harness: data collection, model fitting, closed-loop evaluation
// and the GP-size/solve-time tradeoff study. All outputs are CSV files.
#include <CLI11.hpp>

#include "gpmpc/csv.hpp"
#include "gpmpc/experiment.hpp"
#include "gpmpc/mpc.hpp"

#include <iostream>

namespace {

using namespace gpmpc;

ExperimentConfig load_config(const std::string& path, std::uint64_t seed_override,
                             bool seed_given) {
  ExperimentConfig cfg =
      path.empty() ? ExperimentConfig::from_json_text("{}") : ExperimentConfig::load(path);
  if (seed_given) cfg.seed = seed_override;
  cfg.validate();
  return cfg;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: category=config: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "error: category=data: " << e.what() << "\n";
    return 3;
  } catch (const TrajectoryError& e) {
    std::cerr << "error: category=run: " << e.what() << "\n";
    return 4;
  } catch (const SolverError& e) {
    std::cerr << "error: category=run: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: category=io: " << e.what() << "\n";
    return 5;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GP-augmented quadrotor MPC benchmark harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = 1;
  app.add_option("--config", config_path, "JSON config file (defaults used when omitted)");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--seed", seed, "master seed override")->each([&](const std::string&) {
    seed_given = true;
  });
  app.add_option("--jobs", jobs, "parallel rollouts where cells are independent")
      ->check(CLI::PositiveNumber);

  auto* collect = app.add_subcommand("collect", "fly random polynomials, write dataset.csv");

  std::string dataset_path;
  auto* fit = app.add_subcommand("fit", "fit RDRv and GP models from a dataset");
  fit->add_option("--dataset", dataset_path, "residual dataset CSV (default <out>/dataset.csv)");

  std::string models_dir;
  auto* evaluate = app.add_subcommand("evaluate", "closed-loop model comparison matrix");
  evaluate->add_option("--models", models_dir, "directory with model files (default <out>)");

  auto* tradeoff = app.add_subcommand("tradeoff", "GP size vs accuracy and solve time");
  tradeoff->add_option("--dataset", dataset_path,
                       "residual dataset CSV (default <out>/dataset.csv)");

  std::string replay_trajectory = "circle";
  std::string replay_model = "nominal";
  double replay_speed = 8.0;
  auto* replay = app.add_subcommand("replay", "fly one scenario and dump reference/flown CSVs");
  replay->add_option("--trajectory", replay_trajectory, "circle | lemniscate | random");
  replay->add_option("--speed", replay_speed, "peak speed [m/s]");
  replay->add_option("--model", replay_model, "ideal | nominal | rdrv | gp");
  replay->add_option("--models", models_dir, "directory with model files (default <out>)");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();
  CLI11_PARSE(app, argc, argv);

  return guarded([&]() -> int {
    const ExperimentConfig cfg = load_config(config_path, seed, seed_given);
    if (dataset_path.empty()) dataset_path = out_dir + "/dataset.csv";
    if (models_dir.empty()) models_dir = out_dir;

    if (collect->parsed()) {
      run_collect(cfg, out_dir, std::cout);
    } else if (fit->parsed()) {
      run_fit(cfg, dataset_path, out_dir, std::cout);
    } else if (evaluate->parsed()) {
      run_evaluate(cfg, models_dir, out_dir, std::cout, jobs);
    } else if (tradeoff->parsed()) {
      run_tradeoff(cfg, dataset_path, out_dir, std::cout);
    } else if (replay->parsed()) {
      run_replay(cfg, replay_trajectory, replay_speed, replay_model, models_dir, out_dir,
                 std::cout);
    }
    return 0;
  });
}
