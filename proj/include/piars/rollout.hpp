#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "piars/ars.hpp"
#include "piars/envs.hpp"
#include "piars/nets.hpp"
#include "piars/pi_learner.hpp"

namespace piars::rollout {

// Which slice of the network a flat theta vector addresses: the policy head
// alone (PI-ARS) or encoder plus head (full-network ARS baseline).
enum class ThetaScope { head, full };

int theta_dim(const nets::EncoderStack& stack, ThetaScope scope);
std::vector<double> extract_theta(const nets::EncoderStack& stack, ThetaScope scope);
void apply_theta(nets::EncoderStack& stack, ThetaScope scope, const std::vector<double>& theta);

// Env seed for direction i of one iteration. Both antithetic signs share it,
// so R+ - R- isolates the parameter difference (common random numbers).
std::uint64_t episode_seed(std::uint64_t base, std::uint64_t iteration, int i);

struct EpisodeOutcome {
  double ret = 0.0;
  int length = 0;  // number of env steps taken
  std::string reason;
  bool success = false;
  pi::Episode episode;  // post-pipeline, pre-normalization observations
};

// One full episode: obs -> normalize -> encode -> policy -> step until done.
// Logged actions are in tanh space; the env receives the rescaled action.
EpisodeOutcome run_episode(const env::EnvConfig& cfg, std::uint64_t env_seed,
                           const nets::EncoderStack& stack, const pi::ObsNormalizer& norm);

struct WaveResult {
  std::vector<ars::ReturnPair> returns;  // indexed by direction
  std::vector<pi::Episode> episodes;     // 2N, ordered [0+, 0-, 1+, 1-, ...]
  int episode_count = 0;
  int retries = 0;
  double wall_seconds = 0.0;
};

// Evaluates theta +- sigma_i for every direction on a worker pool. Results are
// a pure function of (stack, theta, perts, iteration, base_seed); worker count
// only affects wall time. A task that throws is retried once, then the wave
// fails with std::runtime_error.
WaveResult evaluate_wave(const env::EnvConfig& cfg, const nets::EncoderStack& stack,
                         ThetaScope scope, const std::vector<double>& theta,
                         const ars::PerturbationSet& perts, const pi::ObsNormalizer& norm,
                         std::uint64_t iteration, std::uint64_t base_seed, int workers);

// Unperturbed policy over several seeds (evaluation / progress metric).
std::vector<EpisodeOutcome> evaluate_policy(const env::EnvConfig& cfg,
                                            const nets::EncoderStack& stack,
                                            const pi::ObsNormalizer& norm,
                                            const std::vector<std::uint64_t>& seeds, int workers);

}  // namespace piars::rollout
