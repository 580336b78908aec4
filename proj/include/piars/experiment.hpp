#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "piars/ars.hpp"
#include "piars/envs.hpp"
#include "piars/nets.hpp"
#include "piars/pi_learner.hpp"
#include "piars/rollout.hpp"

namespace piars::exp {

enum class Algorithm { pi_ars, ars };

std::string algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

// Full experiment description. Every field is serializable as a flat
// `key = value` text file; parse(serialize(c)) == c for all valid configs.
// The image/proprio/action dimensions of `net` are derived from the task and
// are not part of the file format.
struct ExperimentConfig {
  env::EnvConfig env;  // env.task is the experiment's task
  Algorithm algorithm = Algorithm::pi_ars;
  ars::ArsConfig ars;
  pi::PiConfig pi;
  nets::NetSpec net;

  std::uint64_t seed = 1;
  int iterations = 4000;
  int trials = 1;
  int workers = 1;
  int checkpoint_every = 10;  // a checkpoint is always written at the end too
  int plateau_iters = 0;      // optional early stop: no new best max return
                              // for this many iterations (0 = disabled)
  bool checkpoint_replay = true;

  bool operator==(const ExperimentConfig&) const = default;

  rollout::ThetaScope scope() const {
    return algorithm == Algorithm::pi_ars ? rollout::ThetaScope::head : rollout::ThetaScope::full;
  }
  // Copies task-derived dimensions (image size, frame stack, proprio, action)
  // into `net`; called by parse_config and before any training.
  void sync_derived();
  // Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

std::string serialize_config(const ExperimentConfig& cfg);
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// One line per training iteration, append-only.
struct MetricsRecord {
  int iteration = 0;
  long long episodes = 0;  // cumulative: iteration * 2N * episodes_per_eval
  double mean_return = 0.0;
  double max_return = 0.0;
  double min_return = 0.0;
  double infonce = 0.0;      // last applied PI update this iteration (0 if none)
  double reward_loss = 0.0;  // ditto
  int pi_updates = 0;        // applied PI updates this iteration
  double grad_norm = 0.0;    // ||g_hat||_2
  double wall_seconds = 0.0;

  bool operator==(const MetricsRecord&) const = default;
};

std::string metrics_json_line(const MetricsRecord& r, const std::string& task,
                              const std::string& algorithm);
std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRecord& r, const std::string& task,
                             const std::string& algorithm);

struct MetricsFile {
  std::string task;
  std::string algorithm;
  std::vector<MetricsRecord> records;
};

// Parses a metrics .jsonl file; throws std::runtime_error with the offending
// line number on corrupt input.
MetricsFile load_metrics(const std::string& path);

// Equality of two metrics streams; wall time is machine noise and is excluded
// when ignore_wall is set (the bit-exactness contract covers everything else).
bool metrics_equal(const MetricsFile& a, const MetricsFile& b, bool ignore_wall);

// Complete training state between iterations. save -> load -> continue
// reproduces the uninterrupted metric stream bit-exactly (same machine).
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  ExperimentConfig config;
  int iteration = 0;       // iterations completed
  long long episodes = 0;  // episodes consumed
  double best_max_return = 0.0;
  int last_improve_iter = 0;
  bool has_best = false;

  nets::EncoderStack stack;
  std::vector<double> theta;
  std::vector<double> velocity;  // ThetaOptimizer state
  grad::AdamState adam;          // PI optimizer moments (empty for plain ARS)
  pi::ObsNormalizer norm;

  bool has_replay = false;
  std::vector<pi::SubTrajectory> replay;
  std::size_t replay_next = 0;
};

// Fresh iteration-0 checkpoint for a config (network initialized from the
// config seed).
Checkpoint init_checkpoint(const ExperimentConfig& cfg);

// Versioned binary container: magic, version, then named f64 arrays.
void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Run directory layout (frozen):
//   config.txt        effective config echo
//   metrics.jsonl     one record per iteration
//   metrics.csv       CSV mirror of the same records
//   checkpoints/      ckpt_NNNNNN.bin, written every checkpoint_every
//                     iterations and at the end; diagnostic.bin on abort
//   traces/           episode traces written on request
struct TrainResult {
  Checkpoint final;
  std::vector<MetricsRecord> appended;  // records written by this call
  bool plateaued = false;
  std::string run_dir;
};

// Trains up to cfg.iterations, resuming from the latest checkpoint in
// run_dir if one exists (the stored config must match). A rejected update
// aborts with a diagnostic checkpoint and rethrows.
TrainResult train(const ExperimentConfig& cfg, const std::string& run_dir);

struct EvalSummary {
  int episodes = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  std::vector<rollout::EpisodeOutcome> outcomes;
};

// Frozen-policy evaluation; `task` must match the checkpoint's task (empty
// string skips the check).
EvalSummary evaluate(const Checkpoint& ck, const std::string& task, int episodes,
                     std::uint64_t seed, int workers);

// Learning curves: one curve per algorithm, mean +- standard error across
// trials at each iteration index, plotted against cumulative episodes.
struct CurvePoint {
  double episodes = 0.0;
  double mean = 0.0;
  double se = 0.0;
  int n = 0;
};

struct PlotResult {
  std::string task;
  std::map<std::string, std::vector<CurvePoint>> curves;  // keyed by algorithm
  std::string svg;
  std::string table;
};

// Throws on zero files or mismatched task tags.
PlotResult plot(const std::vector<std::string>& metrics_files);

// Runs one frozen-policy episode and writes a line-oriented trace (header
// line, one record per step, terminal record).
void write_trace(const Checkpoint& ck, std::uint64_t env_seed, const std::string& path);

struct ReplayResult {
  int steps = 0;
  double final_x = 0.0;
  double final_y = 0.0;
  double logged_return = 0.0;
  bool matches_log = false;  // re-simulation reproduces every logged position
  std::string rendering;     // text frames: top-down terrain with robot path
};

// Read-only; throws std::runtime_error with a line number on corrupt input.
ReplayResult replay(const std::string& trace_path);

struct SweepTrial {
  int index = 0;
  double sigma = 0.0;
  double delta = 0.0;
  double final_mean_return = 0.0;
  std::string run_dir;
};

// Uniform random search over sigma, delta in [0.005, 0.05]; one training run
// per trial under out_dir/trial_NNN, summary in out_dir/sweep.jsonl.
std::vector<SweepTrial> sweep(const ExperimentConfig& base, int trials,
                              const std::string& out_dir);

}  // namespace piars::exp
