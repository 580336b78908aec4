#include "piars/ars.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "piars/tensor.hpp"

namespace piars::ars {

std::vector<double> PerturbationSet::direction(int i) const {
  std::vector<double> d(dim_, 0.0);
  add_direction(i, 1.0, d);
  return d;
}

void PerturbationSet::add_direction(int i, double coef, std::vector<double>& acc) const {
  grad::require(i >= 0 && i < n_, "perturbation index out of range");
  grad::require(static_cast<int>(acc.size()) == dim_, "perturbation accumulator size mismatch");
  Rng rng(mix64(seed_, 0x70657274ULL, static_cast<std::uint64_t>(i)));
  const double c = coef * scale_;
  for (int j = 0; j < dim_; ++j) acc[j] += c * rng.normal();
}

PerturbationSet sample_perturbations(const ArsConfig& cfg, std::uint64_t seed, int dim) {
  grad::require(cfg.num_perturbations >= 1, "ars: N must be >= 1");
  grad::require(cfg.top_directions >= 1 && cfg.top_directions <= cfg.num_perturbations,
                "ars: need 1 <= M <= N");
  grad::require(cfg.perturb_scale >= 0.0, "ars: perturbation scale must be non-negative");
  return PerturbationSet(seed, cfg.num_perturbations, dim, cfg.perturb_scale);
}

std::vector<int> rank_directions(const std::vector<ReturnPair>& returns) {
  std::vector<int> order(returns.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double ka = std::max(returns[a].plus, returns[a].minus);
    const double kb = std::max(returns[b].plus, returns[b].minus);
    if (ka != kb) return ka > kb;
    return a < b;  // tie: lower perturbation index first
  });
  return order;
}

std::vector<double> estimate_gradient(const std::vector<ReturnPair>& returns,
                                      const PerturbationSet& perts, const ArsConfig& cfg) {
  grad::require(static_cast<int>(returns.size()) == perts.count(),
                "ars: need one return pair per perturbation");
  for (const auto& r : returns) {
    if (!std::isfinite(r.plus) || !std::isfinite(r.minus))
      throw std::runtime_error("ars: non-finite return, iteration aborted");
  }
  const int m = std::min(cfg.top_directions, perts.count());
  const std::vector<int> order = rank_directions(returns);

  double denom = static_cast<double>(m);
  if (cfg.normalize_returns) {
    // std of the 2M selected returns, as in ARS V1-t/V2-t
    double mean = 0.0;
    for (int r = 0; r < m; ++r) mean += returns[order[r]].plus + returns[order[r]].minus;
    mean /= 2.0 * m;
    double var = 0.0;
    for (int r = 0; r < m; ++r) {
      const double dp = returns[order[r]].plus - mean;
      const double dm = returns[order[r]].minus - mean;
      var += dp * dp + dm * dm;
    }
    const double sd = std::sqrt(var / (2.0 * m));
    if (sd > 1e-12) denom *= sd;
  }

  std::vector<double> ghat(perts.dim(), 0.0);
  for (int r = 0; r < m; ++r) {
    const int i = order[r];
    perts.add_direction(i, returns[i].plus - returns[i].minus, ghat);
  }
  const double c = cfg.update_coef / denom;
  for (double& g : ghat) g *= c;
  return ghat;
}

void update_theta(std::vector<double>& theta, const std::vector<double>& ghat,
                  ThetaOptimizer& opt) {
  grad::require(theta.size() == ghat.size(), "update_theta: dimension mismatch");
  for (double g : ghat) {
    if (!std::isfinite(g)) throw std::runtime_error("update_theta: non-finite gradient, rejected");
  }
  if (opt.momentum > 0.0) {
    if (opt.velocity.size() != theta.size()) opt.velocity.assign(theta.size(), 0.0);
    for (std::size_t i = 0; i < theta.size(); ++i) {
      opt.velocity[i] = opt.momentum * opt.velocity[i] + ghat[i];
      theta[i] += opt.velocity[i];
    }
  } else {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += ghat[i];
  }
}

}  // namespace piars::ars
