#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "piars/rollout.hpp"

using namespace piars;
using namespace piars::rollout;

namespace {

// Production observation geometry, slimmed interior widths for speed.
nets::NetSpec rollout_spec(const env::EnvConfig& cfg) {
  nets::NetSpec s;
  s.image_h = env::kImageH;
  s.image_w = env::kImageW;
  s.channels = cfg.frame_stack();
  s.proprio_dim = cfg.proprio_dim();
  s.action_dim = 12;
  s.conv_channels = 2;
  s.cam_dim = 8;
  s.z_dim = 16;
  s.aux_h = 8;
  s.rnn_units = 8;
  s.head_h1 = 8;
  s.head_h2 = 4;
  return s;
}

}  // namespace

TEST_CASE("run_episode: return equals the exact sum of logged rewards") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(1);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  EpisodeOutcome out = run_episode(cfg, 5, stack, norm);
  double sum = 0.0;
  for (double r : out.episode.rewards) sum += r;
  CHECK(out.ret == sum);  // bitwise: same accumulation
  CHECK(out.length == static_cast<int>(out.episode.rewards.size()));
  CHECK(out.episode.obs.size() == out.episode.rewards.size() + 1);
  CHECK(out.episode.actions.size() == out.episode.rewards.size());
  CHECK(out.episode.termination == out.reason);
  CHECK(!out.reason.empty());
}

TEST_CASE("run_episode logs tanh-space actions") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(2);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  EpisodeOutcome out = run_episode(cfg, 7, stack, norm);
  for (const auto& a : out.episode.actions) {
    REQUIRE(a.size() == 12);
    for (double v : a) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("an untrained policy falls quickly on stepping stones") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(3);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  EpisodeOutcome out = run_episode(cfg, 11, stack, norm);
  CHECK(out.length <= cfg.episode_limit);
  CHECK((out.reason == "gap" || out.reason == "height" || out.reason == "low_com" ||
         out.reason == "pitch" || out.reason == "roll" || out.reason == "reach" ||
         out.reason == "limit"));
  CHECK(!out.success);
}

TEST_CASE("run_episode is bit-identical on reruns of the same (seed, theta)") {
  env::EnvConfig cfg;
  cfg.noise.p_drop = 0.1;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(4);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  EpisodeOutcome a = run_episode(cfg, 13, stack, norm);
  EpisodeOutcome b = run_episode(cfg, 13, stack, norm);
  CHECK(a.ret == b.ret);
  CHECK(a.length == b.length);
  CHECK(a.reason == b.reason);
  REQUIRE(a.episode.obs.size() == b.episode.obs.size());
  for (std::size_t t = 0; t < a.episode.obs.size(); ++t) {
    CHECK(a.episode.obs[t].front.v == b.episode.obs[t].front.v);
    CHECK(a.episode.obs[t].proprio == b.episode.obs[t].proprio);
  }
  CHECK(a.episode.actions == b.episode.actions);
}

TEST_CASE("theta extract/apply round-trips and the scopes nest") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(5);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  const int head = theta_dim(stack, ThetaScope::head);
  const int full = theta_dim(stack, ThetaScope::full);
  CHECK(head > 0);
  CHECK(full > head);
  std::vector<double> theta = extract_theta(stack, ThetaScope::full);
  REQUIRE(static_cast<int>(theta.size()) == full);
  nets::EncoderStack copy = stack;
  for (auto& v : theta) v += 0.01;
  apply_theta(copy, ThetaScope::full, theta);
  CHECK(extract_theta(copy, ThetaScope::full) == theta);
  apply_theta(copy, ThetaScope::full, extract_theta(stack, ThetaScope::full));
  CHECK(extract_theta(copy, ThetaScope::full) == extract_theta(stack, ThetaScope::full));
}

TEST_CASE("evaluate_wave runs 2N episodes with shared antithetic env seeds") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(6);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  ars::ArsConfig acfg;
  acfg.num_perturbations = 4;
  acfg.top_directions = 2;
  acfg.perturb_scale = 0.05;
  const std::vector<double> theta = extract_theta(stack, ThetaScope::head);
  ars::PerturbationSet perts =
      ars::sample_perturbations(acfg, 123, static_cast<int>(theta.size()));
  WaveResult wave = evaluate_wave(cfg, stack, ThetaScope::head, theta, perts, norm, 3, 99, 2);
  CHECK(wave.episode_count == 8);
  REQUIRE(wave.returns.size() == 4);
  REQUIRE(wave.episodes.size() == 8);
  CHECK(wave.retries == 0);
  for (int i = 0; i < 4; ++i) {
    // same env seed for both signs: identical initial observation
    CHECK(wave.episodes[2 * i].obs[0].front.v == wave.episodes[2 * i + 1].obs[0].front.v);
    CHECK(wave.episodes[2 * i].obs[0].proprio == wave.episodes[2 * i + 1].obs[0].proprio);
    // the logged returns are the logged reward sums
    double plus = 0.0;
    for (double r : wave.episodes[2 * i].rewards) plus += r;
    CHECK(wave.returns[i].plus == plus);
  }
  // distinct directions see distinct terrain seeds
  CHECK(episode_seed(99, 3, 0) != episode_seed(99, 3, 1));
  CHECK(episode_seed(99, 3, 0) != episode_seed(99, 4, 0));
}

TEST_CASE("wave results are invariant to the worker count") {
  env::EnvConfig cfg;
  cfg.noise.p_drop = 0.05;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(7);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  ars::ArsConfig acfg;
  acfg.num_perturbations = 3;
  acfg.top_directions = 3;
  acfg.perturb_scale = 0.05;
  const std::vector<double> theta = extract_theta(stack, ThetaScope::head);
  ars::PerturbationSet perts =
      ars::sample_perturbations(acfg, 55, static_cast<int>(theta.size()));
  WaveResult w1 = evaluate_wave(cfg, stack, ThetaScope::head, theta, perts, norm, 1, 7, 1);
  WaveResult w4 = evaluate_wave(cfg, stack, ThetaScope::head, theta, perts, norm, 1, 7, 4);
  REQUIRE(w1.returns.size() == w4.returns.size());
  for (std::size_t i = 0; i < w1.returns.size(); ++i) {
    CHECK(w1.returns[i].plus == w4.returns[i].plus);
    CHECK(w1.returns[i].minus == w4.returns[i].minus);
  }
  for (std::size_t e = 0; e < w1.episodes.size(); ++e) {
    CHECK(w1.episodes[e].rewards == w4.episodes[e].rewards);
    CHECK(w1.episodes[e].actions == w4.episodes[e].actions);
  }
  // the subsequent gradient estimate is identical too
  const auto g1 = ars::estimate_gradient(w1.returns, perts, acfg);
  const auto g4 = ars::estimate_gradient(w4.returns, perts, acfg);
  CHECK(g1 == g4);
}

TEST_CASE("full-network scope actually perturbs the encoder") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(8);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  ars::ArsConfig acfg;
  acfg.num_perturbations = 1;
  acfg.top_directions = 1;
  acfg.perturb_scale = 0.05;
  const std::vector<double> theta = extract_theta(stack, ThetaScope::full);
  ars::PerturbationSet perts =
      ars::sample_perturbations(acfg, 31, static_cast<int>(theta.size()));
  WaveResult wave = evaluate_wave(cfg, stack, ThetaScope::full, theta, perts, norm, 0, 1, 1);
  // antithetic signs share the terrain but act differently
  CHECK(wave.episodes[0].actions[0] != wave.episodes[1].actions[0]);
}

TEST_CASE("no trajectory is lost between a wave and the replay buffer") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(9);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  ars::ArsConfig acfg;
  acfg.num_perturbations = 3;
  acfg.top_directions = 3;
  acfg.perturb_scale = 0.05;
  const std::vector<double> theta = extract_theta(stack, ThetaScope::head);
  ars::PerturbationSet perts =
      ars::sample_perturbations(acfg, 77, static_cast<int>(theta.size()));
  WaveResult wave = evaluate_wave(cfg, stack, ThetaScope::head, theta, perts, norm, 0, 2, 2);
  const int k = 5;
  pi::ReplayBuffer buf(100000);
  std::size_t expect = 0;
  for (const auto& ep : wave.episodes) {
    buf.add_episode(ep, k);
    expect += static_cast<std::size_t>(std::max(0, ep.length() - k));
  }
  CHECK(buf.size() == expect);
}

TEST_CASE("theta of the wrong dimension is rejected") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(10);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  ars::ArsConfig acfg;
  acfg.num_perturbations = 1;
  acfg.top_directions = 1;
  std::vector<double> theta = extract_theta(stack, ThetaScope::head);
  ars::PerturbationSet perts =
      ars::sample_perturbations(acfg, 1, static_cast<int>(theta.size()) + 1);
  CHECK_THROWS_AS(evaluate_wave(cfg, stack, ThetaScope::head, theta, perts, norm, 0, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("unbuildable environments fail the wave after one retry") {
  env::EnvConfig cfg;
  cfg.width_lo = cfg.width_hi = 0.1;  // stance can never be supported
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(11);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  ars::ArsConfig acfg;
  acfg.num_perturbations = 1;
  acfg.top_directions = 1;
  const std::vector<double> theta = extract_theta(stack, ThetaScope::head);
  ars::PerturbationSet perts =
      ars::sample_perturbations(acfg, 1, static_cast<int>(theta.size()));
  CHECK_THROWS_AS(evaluate_wave(cfg, stack, ThetaScope::head, theta, perts, norm, 0, 1, 2),
                  std::runtime_error);
}

TEST_CASE("evaluate_policy runs one episode per seed, reproducibly") {
  env::EnvConfig cfg;
  nets::NetSpec spec = rollout_spec(cfg);
  Rng rng(12);
  nets::EncoderStack stack = nets::make_stack(spec, rng);
  pi::ObsNormalizer norm(spec.proprio_dim);
  const std::vector<std::uint64_t> seeds = {3, 1, 4, 1};  // duplicate seed allowed
  auto outs = evaluate_policy(cfg, stack, norm, seeds, 2);
  REQUIRE(outs.size() == 4);
  CHECK(outs[1].ret == outs[3].ret);  // same seed, same policy
  EpisodeOutcome direct = run_episode(cfg, 3, stack, norm);
  CHECK(outs[0].ret == direct.ret);
  CHECK(outs[0].length == direct.length);
}
