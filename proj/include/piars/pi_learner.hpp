#pragma once

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "piars/adam.hpp"
#include "piars/nets.hpp"
#include "piars/rng.hpp"
#include "piars/types.hpp"

namespace piars::pi {

// k-step training unit (s_t, a_t, r_t, ..., a_{t+k-1}, r_{t+k-1}, s_{t+k}).
// Only the visual part of s_{t+k} is consumed by the contrastive objective.
struct SubTrajectory {
  Observation s_t;
  std::vector<std::vector<double>> actions;  // k actions, tanh-space
  std::vector<double> rewards;               // k rewards
  Observation s_tk;
};

// One rollout episode: n observations, n-1 actions/rewards. Observations are
// post-pipeline but pre-normalization; normalization is re-applied at
// training time with the then-current statistics.
struct Episode {
  std::vector<Observation> obs;
  std::vector<std::vector<double>> actions;
  std::vector<double> rewards;
  std::string termination;
  bool success = false;
  int length() const { return static_cast<int>(obs.size()); }
};

// FIFO ring of sub-trajectories. add_episode may be called from several
// collector threads; sampling copies under the lock.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}

  struct AddStats {
    int added = 0;
    int skipped_episodes = 0;
  };

  // Slices at every valid start offset; an episode shorter than k+1
  // observations yields nothing and is counted, not an error.
  AddStats add_episode(const Episode& ep, int k);

  std::size_t size() const;
  std::size_t capacity() const { return capacity_; }
  // Uniform with replacement over current contents.
  std::vector<SubTrajectory> sample(int n, Rng& rng) const;
  std::vector<SubTrajectory> snapshot() const;
  void restore(std::vector<SubTrajectory> items, std::size_t next);
  std::size_t ring_next() const { return next_; }

 private:
  void push(SubTrajectory st);

  std::size_t capacity_;
  std::vector<SubTrajectory> items_;
  std::size_t next_ = 0;  // ring write position once full
  mutable std::mutex mu_;
};

struct RunningStat {
  double mean = 0.0;
  double m2 = 0.0;
  std::uint64_t count = 0;

  void add(double x) {
    count += 1;
    const double d = x - mean;
    mean += d / static_cast<double>(count);
    m2 += d * (x - mean);
  }
  double variance() const { return count > 1 ? m2 / static_cast<double>(count) : 0.0; }
  double stddev() const;
};

// Running mean/std standardization: scalar statistics per camera image,
// per-component statistics for the proprio vector. Statistics are fed only
// from freshly collected observations, never from replay reads.
class ObsNormalizer {
 public:
  ObsNormalizer() = default;
  explicit ObsNormalizer(int proprio_dim) : proprio_(proprio_dim) {}

  static constexpr double kEpsStd = 1e-6;

  void observe(const Observation& obs);
  Observation normalize(const Observation& obs) const;

  const RunningStat& front_stat() const { return front_; }
  const RunningStat& rear_stat() const { return rear_; }
  const std::vector<RunningStat>& proprio_stats() const { return proprio_; }
  std::vector<double> serialize() const;
  void deserialize(const std::vector<double>& data);

 private:
  RunningStat front_, rear_;
  std::vector<RunningStat> proprio_;
};

struct PiConfig {
  int batch = 512;
  int k = 5;  // 30 for indoor navigation
  double lr = 1e-4;
  std::size_t capacity = 50000;
  int steps_per_iter = 2;
  double infonce_weight = 1.0;

  bool operator==(const PiConfig&) const = default;
};

struct PiLossReport {
  double infonce = 0.0;     // the Ĩ estimate (to be maximized)
  double reward_loss = 0.0;
  double total = 0.0;       // reward_loss - infonce_weight * infonce
  bool applied = false;
  std::string note;
};

// InfoNCE batch estimator on a raw [B x B] score matrix; anchors on rows,
// the positive on the diagonal, log-mean-exp over the full row. Bounded
// above by log B.
double infonce_from_scores(const grad::Tensor& scores);

double infonce_loss(const std::vector<SubTrajectory>& batch, const nets::EncoderStack& stack,
                    const ObsNormalizer& norm);
double reward_loss(const std::vector<SubTrajectory>& batch, const nets::EncoderStack& stack,
                   const ObsNormalizer& norm);

// Evaluate the combined loss without touching parameters.
PiLossReport pi_loss(const std::vector<SubTrajectory>& batch, nets::EncoderStack& stack,
                     const ObsNormalizer& norm, double infonce_weight = 1.0);

// One Adam update of encoder + aux heads + reward RNN (policy head untouched).
// Throws std::runtime_error on non-finite loss or gradients.
PiLossReport pi_update_on_batch(const std::vector<SubTrajectory>& batch,
                                nets::EncoderStack& stack, grad::AdamState& adam,
                                const ObsNormalizer& norm, double infonce_weight = 1.0);

// Samples a batch and updates; no-op (applied=false) while the buffer holds
// fewer than cfg.batch sub-trajectories.
PiLossReport pi_step(ReplayBuffer& buf, nets::EncoderStack& stack, grad::AdamState& adam,
                     const ObsNormalizer& norm, const PiConfig& cfg, std::uint64_t seed);

}  // namespace piars::pi
