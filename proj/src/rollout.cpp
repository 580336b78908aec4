#include "piars/rollout.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <thread>

namespace piars::rollout {

namespace {

std::vector<nets::Tensor*> scope_params(nets::EncoderStack& stack, ThetaScope scope) {
  return scope == ThetaScope::head ? nets::policy_head_params(stack)
                                   : nets::full_policy_params(stack);
}

std::vector<const nets::Tensor*> scope_params(const nets::EncoderStack& stack, ThetaScope scope) {
  return scope == ThetaScope::head ? nets::policy_head_params(stack)
                                   : nets::full_policy_params(stack);
}

// Runs fn(task_index) for 0..n-1 on `workers` threads. The first exception
// wins; remaining tasks still drain so threads can join.
void run_parallel(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    while (true) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace

int theta_dim(const nets::EncoderStack& stack, ThetaScope scope) {
  return static_cast<int>(nets::flat_size(scope_params(stack, scope)));
}

std::vector<double> extract_theta(const nets::EncoderStack& stack, ThetaScope scope) {
  return nets::flatten(scope_params(stack, scope));
}

void apply_theta(nets::EncoderStack& stack, ThetaScope scope, const std::vector<double>& theta) {
  nets::unflatten(theta, scope_params(stack, scope));
}

std::uint64_t episode_seed(std::uint64_t base, std::uint64_t iteration, int i) {
  return mix64(base, 0x726f6c6c6f7574ULL, iteration, static_cast<std::uint64_t>(i));
}

EpisodeOutcome run_episode(const env::EnvConfig& cfg, std::uint64_t env_seed,
                           const nets::EncoderStack& stack, const pi::ObsNormalizer& norm) {
  env::Environment e(cfg);
  const ActionSpec spec = env::default_action_spec();
  EpisodeOutcome out;
  Observation obs = e.reset(env_seed);
  out.episode.obs.push_back(obs);
  while (true) {
    const Observation normalized = norm.normalize(obs);
    const std::vector<double> z = nets::encode(stack.enc, normalized);
    const std::vector<double> raw = nets::policy_raw(stack.policy, z, normalized.proprio);
    const env::StepResult r = e.step(nets::rescale_action(raw, spec));
    out.episode.actions.push_back(raw);
    out.episode.rewards.push_back(r.reward);
    out.episode.obs.push_back(r.obs);
    out.ret += r.reward;
    ++out.length;
    if (r.done) {
      out.reason = r.reason;
      break;
    }
  }
  out.success = out.reason == "success";
  out.episode.termination = out.reason;
  out.episode.success = out.success;
  return out;
}

WaveResult evaluate_wave(const env::EnvConfig& cfg, const nets::EncoderStack& stack,
                         ThetaScope scope, const std::vector<double>& theta,
                         const ars::PerturbationSet& perts, const pi::ObsNormalizer& norm,
                         std::uint64_t iteration, std::uint64_t base_seed, int workers) {
  const int n = perts.count();
  if (static_cast<int>(theta.size()) != perts.dim())
    throw std::invalid_argument("evaluate_wave: theta size does not match perturbation dim");
  const auto t0 = std::chrono::steady_clock::now();

  WaveResult wave;
  wave.returns.assign(static_cast<std::size_t>(n), {});
  wave.episodes.resize(static_cast<std::size_t>(2 * n));
  std::atomic<int> retries{0};

  // Task 2i is direction i with +sigma, task 2i+1 with -sigma. Workers hold a
  // private stack copy and re-apply the perturbed theta per task.
  run_parallel(2 * n, workers, [&](int task) {
    thread_local nets::EncoderStack local;
    if (!(local.spec == stack.spec)) local = stack;
    // The encoder snapshot must match even when only the head is perturbed.
    local.enc = stack.enc;

    const int i = task / 2;
    const double sign = task % 2 == 0 ? 1.0 : -1.0;
    std::vector<double> perturbed = theta;
    perts.add_direction(i, sign, perturbed);
    apply_theta(local, scope, perturbed);

    const std::uint64_t seed = episode_seed(base_seed, iteration, i);
    EpisodeOutcome out;
    try {
      out = run_episode(cfg, seed, local, norm);
    } catch (const std::exception&) {
      retries.fetch_add(1);
      out = run_episode(cfg, seed, local, norm);  // second failure aborts the wave
    }
    (sign > 0 ? wave.returns[i].plus : wave.returns[i].minus) = out.ret;
    wave.episodes[static_cast<std::size_t>(task)] = std::move(out.episode);
  });

  wave.episode_count = 2 * n;
  wave.retries = retries.load();
  wave.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return wave;
}

std::vector<EpisodeOutcome> evaluate_policy(const env::EnvConfig& cfg,
                                            const nets::EncoderStack& stack,
                                            const pi::ObsNormalizer& norm,
                                            const std::vector<std::uint64_t>& seeds, int workers) {
  std::vector<EpisodeOutcome> out(seeds.size());
  run_parallel(static_cast<int>(seeds.size()), workers,
               [&](int i) { out[static_cast<std::size_t>(i)] = run_episode(cfg, seeds[i], stack, norm); });
  return out;
}

}  // namespace piars::rollout
