#include "piars/pi_learner.hpp"

#include <cmath>
#include <stdexcept>

#include "piars/kernels.hpp"

namespace piars::pi {

ReplayBuffer::AddStats ReplayBuffer::add_episode(const Episode& ep, int k) {
  grad::require(k >= 1, "replay: k must be >= 1");
  AddStats stats;
  const int n = ep.length();
  if (n < k + 1) {
    std::lock_guard<std::mutex> lock(mu_);
    return AddStats{0, 1};
  }
  std::lock_guard<std::mutex> lock(mu_);
  for (int t = 0; t + k < n; ++t) {
    SubTrajectory st;
    st.s_t = ep.obs[t];
    st.actions.assign(ep.actions.begin() + t, ep.actions.begin() + t + k);
    st.rewards.assign(ep.rewards.begin() + t, ep.rewards.begin() + t + k);
    st.s_tk = ep.obs[t + k];
    push(std::move(st));
    ++stats.added;
  }
  return stats;
}

void ReplayBuffer::push(SubTrajectory st) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(st));
  } else {
    items_[next_] = std::move(st);
    next_ = (next_ + 1) % capacity_;
  }
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return items_.size();
}

std::vector<SubTrajectory> ReplayBuffer::sample(int n, Rng& rng) const {
  std::lock_guard<std::mutex> lock(mu_);
  grad::require(!items_.empty(), "replay: cannot sample from an empty buffer");
  std::vector<SubTrajectory> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) out.push_back(items_[rng.uniform_int(static_cast<int>(items_.size()))]);
  return out;
}

std::vector<SubTrajectory> ReplayBuffer::snapshot() const {
  std::lock_guard<std::mutex> lock(mu_);
  return items_;
}

void ReplayBuffer::restore(std::vector<SubTrajectory> items, std::size_t next) {
  std::lock_guard<std::mutex> lock(mu_);
  items_ = std::move(items);
  next_ = next;
}

double RunningStat::stddev() const {
  const double s = std::sqrt(variance());
  return s > ObsNormalizer::kEpsStd ? s : ObsNormalizer::kEpsStd;
}

void ObsNormalizer::observe(const Observation& obs) {
  for (double p : obs.front.v) front_.add(p);
  for (double p : obs.rear.v) rear_.add(p);
  if (proprio_.size() != obs.proprio.size()) proprio_.resize(obs.proprio.size());
  for (std::size_t i = 0; i < obs.proprio.size(); ++i) proprio_[i].add(obs.proprio[i]);
}

Observation ObsNormalizer::normalize(const Observation& obs) const {
  Observation out = obs;
  const double fm = front_.mean, fs = front_.stddev();
  for (double& p : out.front.v) p = (p - fm) / fs;
  const double rm = rear_.mean, rs = rear_.stddev();
  for (double& p : out.rear.v) p = (p - rm) / rs;
  for (std::size_t i = 0; i < out.proprio.size(); ++i) {
    if (i < proprio_.size())
      out.proprio[i] = (out.proprio[i] - proprio_[i].mean) / proprio_[i].stddev();
  }
  return out;
}

std::vector<double> ObsNormalizer::serialize() const {
  std::vector<double> d;
  auto put = [&](const RunningStat& s) {
    d.push_back(s.mean);
    d.push_back(s.m2);
    d.push_back(static_cast<double>(s.count));
  };
  put(front_);
  put(rear_);
  d.push_back(static_cast<double>(proprio_.size()));
  for (const auto& s : proprio_) put(s);
  return d;
}

void ObsNormalizer::deserialize(const std::vector<double>& d) {
  std::size_t off = 0;
  auto get = [&](RunningStat& s) {
    s.mean = d[off];
    s.m2 = d[off + 1];
    s.count = static_cast<std::uint64_t>(d[off + 2]);
    off += 3;
  };
  get(front_);
  get(rear_);
  proprio_.assign(static_cast<std::size_t>(d[off++]), RunningStat{});
  for (auto& s : proprio_) get(s);
}

double infonce_from_scores(const grad::Tensor& scores) {
  grad::require(scores.rank() == 2 && scores.shape[0] == scores.shape[1],
                "infonce: score matrix must be square");
  const int b = scores.shape[0];
  grad::require(b >= 2, "infonce: needs batch size >= 2 for in-batch negatives");
  const double log_b = std::log(static_cast<double>(b));
  double acc = 0.0;
  for (int i = 0; i < b; ++i) {
    const double lse = grad::kernels::logsumexp(&scores.v[static_cast<std::size_t>(i) * b], b);
    acc += scores.at(i, i) - (lse - log_b);
  }
  return acc / static_cast<double>(b);
}

namespace {

struct PiGraph {
  grad::Tape::Id loss;
  grad::Tape::Id infonce;
  grad::Tape::Id reward;
};

// Builds the combined objective for one batch on the given tape. Anchors
// use the full encoder phi; futures use the vision encoder behind a
// stop-gradient, so contrastive updates never reach phi_v through that
// branch.
PiGraph build_pi_graph(grad::Tape& tape, const nets::TapedParams& tp,
                       const nets::EncoderStack& stack, const std::vector<SubTrajectory>& batch,
                       const ObsNormalizer& norm, double infonce_weight) {
  using Id = grad::Tape::Id;
  const int b = static_cast<int>(batch.size());
  grad::require(b >= 2, "pi loss: batch must hold at least 2 sub-trajectories");
  const int k = static_cast<int>(batch[0].actions.size());
  for (const auto& st : batch) {
    grad::require(static_cast<int>(st.actions.size()) == k &&
                      static_cast<int>(st.rewards.size()) == k,
                  "pi loss: sub-trajectory k mismatch within batch");
  }

  std::vector<Id> z_past, z_future, sq_sums;
  for (const auto& st : batch) {
    const Observation cur = norm.normalize(st.s_t);
    const Observation fut = norm.normalize(st.s_tk);
    Id z = nets::taped_encode(tape, tp, stack.enc, cur);
    z_past.push_back(tape.l2_normalize(nets::taped_mlp2(tape, tp, stack.past, z)));
    Id fvis = tape.stopgrad(nets::taped_encode_vision(tape, tp, stack.enc.vis, fut));
    z_future.push_back(nets::taped_mlp2(tape, tp, stack.future, fvis));

    Id rhat = nets::taped_rnn_unroll(tape, tp, stack.rnn, z, st.actions);
    Id err = tape.sub(rhat, tape.constant(grad::Tensor::vec(st.rewards)));
    sq_sums.push_back(tape.sum(tape.square(err)));
  }

  Id scores = tape.matmul_nt(tape.stack_rows(z_past), tape.stack_rows(z_future));
  Id row_lse = tape.logsumexp_rows(scores);
  Id per_anchor = tape.sub(tape.diag(scores), row_lse);
  Id infonce = tape.add_const(tape.mean(per_anchor), std::log(static_cast<double>(b)));

  Id reward = tape.mean(tape.concat(sq_sums));  // mean over batch of per-sample sums

  Id loss = tape.sub(reward, tape.scale(infonce, infonce_weight));
  return PiGraph{loss, infonce, reward};
}

}  // namespace

double infonce_loss(const std::vector<SubTrajectory>& batch, const nets::EncoderStack& stack,
                    const ObsNormalizer& norm) {
  auto& s = const_cast<nets::EncoderStack&>(stack);
  grad::Tape tape;
  nets::TapedParams tp = nets::register_params(tape, nets::pi_params(s));
  PiGraph gph = build_pi_graph(tape, tp, stack, batch, norm, 1.0);
  return tape.val(gph.infonce).v[0];
}

double reward_loss(const std::vector<SubTrajectory>& batch, const nets::EncoderStack& stack,
                   const ObsNormalizer& norm) {
  grad::require(!batch.empty(), "reward_loss: batch must be nonempty");
  // Direct evaluation through the untaped forward path.
  double acc = 0.0;
  for (const auto& st : batch) {
    const Observation cur = norm.normalize(st.s_t);
    std::vector<double> z = nets::encode(stack.enc, cur);
    std::vector<double> rhat = nets::rnn_unroll(stack.rnn, z, st.actions);
    for (std::size_t j = 0; j < rhat.size(); ++j) {
      const double e = rhat[j] - st.rewards[j];
      acc += e * e;
    }
  }
  return acc / static_cast<double>(batch.size());
}

PiLossReport pi_loss(const std::vector<SubTrajectory>& batch, nets::EncoderStack& stack,
                     const ObsNormalizer& norm, double infonce_weight) {
  grad::Tape tape;
  nets::TapedParams tp = nets::register_params(tape, nets::pi_params(stack));
  PiGraph gph = build_pi_graph(tape, tp, stack, batch, norm, infonce_weight);
  PiLossReport rep;
  rep.infonce = tape.val(gph.infonce).v[0];
  rep.reward_loss = tape.val(gph.reward).v[0];
  rep.total = tape.val(gph.loss).v[0];
  return rep;
}

PiLossReport pi_update_on_batch(const std::vector<SubTrajectory>& batch,
                                nets::EncoderStack& stack, grad::AdamState& adam,
                                const ObsNormalizer& norm, double infonce_weight) {
  std::vector<grad::Tensor*> params = nets::pi_params(stack);
  grad::Tape tape;
  nets::TapedParams tp = nets::register_params(tape, params);
  PiGraph gph = build_pi_graph(tape, tp, stack, batch, norm, infonce_weight);

  PiLossReport rep;
  rep.infonce = tape.val(gph.infonce).v[0];
  rep.reward_loss = tape.val(gph.reward).v[0];
  rep.total = tape.val(gph.loss).v[0];
  if (!std::isfinite(rep.total))
    throw std::runtime_error("pi update: non-finite loss, step rejected");

  tape.backward(gph.loss);
  std::vector<grad::Tensor> grads;
  grads.reserve(params.size());
  for (grad::Tensor* p : params) grads.push_back(tape.grad(tp.id(*p)));
  grad::adam_step(params, grads, adam);
  rep.applied = true;
  return rep;
}

PiLossReport pi_step(ReplayBuffer& buf, nets::EncoderStack& stack, grad::AdamState& adam,
                     const ObsNormalizer& norm, const PiConfig& cfg, std::uint64_t seed) {
  if (buf.size() < static_cast<std::size_t>(cfg.batch)) {
    PiLossReport rep;
    rep.note = "buffer below batch size, no-op";
    return rep;
  }
  Rng rng(seed);
  std::vector<SubTrajectory> batch = buf.sample(cfg.batch, rng);
  return pi_update_on_batch(batch, stack, adam, norm, cfg.infonce_weight);
}

}  // namespace piars::pi
