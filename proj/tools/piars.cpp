// Experiment command line: train / evaluate / plot / replay / sweep.
// Exit codes: 0 success, 1 usage error, 2 runtime failure.
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "piars/experiment.hpp"

namespace fs = std::filesystem;
using namespace piars;

namespace {

struct CommonOpts {
  std::string config;
  std::uint64_t seed = 0;
  int workers = 0;
  std::string task;
  std::string algorithm;
  int iterations = 0;
  std::string out_dir;
};

// Shared flags; every one can also come from the environment as PIARS_<FLAG>.
void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config, "config file (key = value lines)")
      ->envname("PIARS_CONFIG");
  cmd->add_option("--seed", o.seed, "base random seed")->envname("PIARS_SEED");
  cmd->add_option("--workers", o.workers, "rollout worker threads")->envname("PIARS_WORKERS");
  cmd->add_option("--task", o.task,
                  "stepping_stones | quincuncial_piles | moving_platforms | navigation")
      ->envname("PIARS_TASK");
  cmd->add_option("--algorithm", o.algorithm, "pi_ars | ars")->envname("PIARS_ALGORITHM");
  cmd->add_option("--iterations", o.iterations, "training iteration cap")
      ->envname("PIARS_ITERATIONS");
  cmd->add_option("--out-dir", o.out_dir, "output directory")->envname("PIARS_OUT_DIR");
}

// File config first, then explicit flags on top.
exp::ExperimentConfig build_config(const CLI::App* cmd, const CommonOpts& o) {
  exp::ExperimentConfig cfg;
  if (!o.config.empty()) cfg = exp::load_config_file(o.config);
  if (cmd->count("--seed")) cfg.seed = o.seed;
  if (cmd->count("--workers")) cfg.workers = o.workers;
  if (cmd->count("--task")) cfg.env.task = env::task_from_name(o.task);
  if (cmd->count("--algorithm")) cfg.algorithm = exp::algorithm_from_name(o.algorithm);
  if (cmd->count("--iterations")) cfg.iterations = o.iterations;
  cfg.sync_derived();
  cfg.validate();
  return cfg;
}

int run_train(const CLI::App* cmd, const CommonOpts& o) {
  exp::ExperimentConfig cfg = build_config(cmd, o);
  const std::string run_dir = o.out_dir.empty() ? "run" : o.out_dir;
  const exp::TrainResult res = exp::train(cfg, run_dir);
  for (const auto& r : res.appended)
    std::cout << "iter " << r.iteration << "  episodes " << r.episodes << "  mean "
              << r.mean_return << "  max " << r.max_return << "  |g| " << r.grad_norm << "\n";
  if (res.plateaued) std::cout << "stopped early: max-return plateau\n";
  std::cout << "run dir: " << res.run_dir << "  (iteration " << res.final.iteration << ")\n";
  return 0;
}

int run_evaluate(const CLI::App* cmd, const CommonOpts& o, const std::string& checkpoint,
                 int episodes, const std::string& trace) {
  const exp::Checkpoint ck = exp::load_checkpoint(checkpoint);
  const std::uint64_t seed = cmd->count("--seed") ? o.seed : ck.config.seed;
  const int workers = cmd->count("--workers") ? o.workers : ck.config.workers;
  const exp::EvalSummary s = exp::evaluate(ck, o.task, episodes, seed, workers);
  for (std::size_t i = 0; i < s.outcomes.size(); ++i) {
    const auto& out = s.outcomes[i];
    std::cout << "episode " << i << ": return " << out.ret << "  steps " << out.length
              << "  end " << out.reason << (out.success ? "  (success)" : "") << "\n";
  }
  std::cout << "mean return " << s.mean_return << "  success rate " << s.success_rate << " over "
            << s.episodes << " episodes\n";
  if (!trace.empty()) {
    exp::write_trace(ck, mix64(seed, 0x6576616cULL, 0), trace);
    std::cout << "trace written: " << trace << "\n";
  }
  return 0;
}

int run_plot(const CommonOpts& o, const std::vector<std::string>& files) {
  const exp::PlotResult res = exp::plot(files);
  std::cout << res.table;
  const fs::path dir = o.out_dir.empty() ? fs::path(".") : fs::path(o.out_dir);
  fs::create_directories(dir);
  std::ofstream svg(dir / "curves.svg", std::ios::trunc);
  svg << res.svg;
  std::ofstream tab(dir / "curves.txt", std::ios::trunc);
  tab << res.table;
  std::cout << "wrote " << (dir / "curves.svg").string() << " and "
            << (dir / "curves.txt").string() << "\n";
  return 0;
}

int run_replay(const std::string& trace) {
  const exp::ReplayResult res = exp::replay(trace);
  std::cout << res.rendering;
  std::cout << "steps " << res.steps << "  final (" << res.final_x << ", " << res.final_y
            << ")  logged return " << res.logged_return
            << (res.matches_log ? "  [re-simulation matches]" : "  [MISMATCH vs log]") << "\n";
  return res.matches_log ? 0 : 2;
}

int run_sweep(const CLI::App* cmd, const CommonOpts& o, int trials) {
  exp::ExperimentConfig cfg = build_config(cmd, o);
  const std::string out_dir = o.out_dir.empty() ? "sweep" : o.out_dir;
  const auto results = exp::sweep(cfg, trials, out_dir);
  for (const auto& t : results)
    std::cout << "trial " << t.index << "  sigma " << t.sigma << "  delta " << t.delta
              << "  final mean return " << t.final_mean_return << "\n";
  std::cout << "summary: " << (fs::path(out_dir) / "sweep.jsonl").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PI-ARS experiments: predictive-information representation learning + ARS"};
  app.require_subcommand(1);

  CommonOpts train_o, eval_o, plot_o, sweep_o;
  std::string eval_checkpoint, eval_trace, replay_trace;
  int eval_episodes = 10, sweep_trials = 4;
  std::vector<std::string> plot_files;

  CLI::App* train_cmd = app.add_subcommand("train", "run a training experiment");
  add_common(train_cmd, train_o);

  CLI::App* eval_cmd = app.add_subcommand("evaluate", "frozen-policy evaluation of a checkpoint");
  add_common(eval_cmd, eval_o);
  eval_cmd->add_option("--checkpoint", eval_checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes");
  eval_cmd->add_option("--trace", eval_trace, "also write one episode trace to this path");

  CLI::App* plot_cmd = app.add_subcommand("plot", "learning curves from metrics files");
  add_common(plot_cmd, plot_o);
  plot_cmd->add_option("files", plot_files, "metrics .jsonl files")->required();

  CLI::App* replay_cmd = app.add_subcommand("replay", "render a recorded episode trace");
  replay_cmd->add_option("trace", replay_trace, "trace file")->required();

  CLI::App* sweep_cmd = app.add_subcommand("sweep", "random sigma/delta search in [0.005, 0.05]");
  add_common(sweep_cmd, sweep_o);
  sweep_cmd->add_option("--trials", sweep_trials, "number of sweep trials");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_cmd, train_o);
    if (eval_cmd->parsed())
      return run_evaluate(eval_cmd, eval_o, eval_checkpoint, eval_episodes, eval_trace);
    if (plot_cmd->parsed()) return run_plot(plot_o, plot_files);
    if (replay_cmd->parsed()) return run_replay(replay_trace);
    if (sweep_cmd->parsed()) return run_sweep(sweep_cmd, sweep_o, sweep_trials);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
