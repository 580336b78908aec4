#pragma once

#include <cstdint>
#include <vector>

#include "piars/rng.hpp"

namespace piars::ars {

struct ArsConfig {
  int num_perturbations = 1024;  // N
  int top_directions = 512;      // M
  double perturb_scale = 0.02;   // sigma, sampling std per component
  double update_coef = 0.02;     // delta in the gradient estimate
  int episodes_per_eval = 1;
  // Optional ARS "V1-t" style division by the std of the selected returns.
  bool normalize_returns = false;
  double momentum = 0.0;  // 0 = plain addition

  bool operator==(const ArsConfig&) const = default;
};

// N i.i.d. normal direction vectors, reproducible from the seed alone.
// Directions are generated on demand (full-network theta is large enough
// that materializing all of them is wasteful).
class PerturbationSet {
 public:
  PerturbationSet(std::uint64_t seed, int n, int dim, double scale)
      : seed_(seed), n_(n), dim_(dim), scale_(scale) {}

  int count() const { return n_; }
  int dim() const { return dim_; }
  double scale() const { return scale_; }
  std::uint64_t seed() const { return seed_; }

  std::vector<double> direction(int i) const;
  void add_direction(int i, double coef, std::vector<double>& acc) const;  // acc += coef * sigma_i

 private:
  std::uint64_t seed_;
  int n_, dim_;
  double scale_;
};

PerturbationSet sample_perturbations(const ArsConfig& cfg, std::uint64_t seed, int dim);

struct ReturnPair {
  double plus = 0.0;
  double minus = 0.0;
};

// Top-M ranked antithetic estimate: directions ranked by max(R+, R-)
// descending (ties: lower index first), g = (delta / M) * sum (R+ - R-) sigma_i.
std::vector<double> estimate_gradient(const std::vector<ReturnPair>& returns,
                                      const PerturbationSet& perts, const ArsConfig& cfg);

// Rank order used by estimate_gradient, exposed for tests.
std::vector<int> rank_directions(const std::vector<ReturnPair>& returns);

struct ThetaOptimizer {
  double momentum = 0.0;
  std::vector<double> velocity;
};

// theta' = theta + step(g); plain ascent by default, heavy-ball when
// momentum > 0. Rejects non-finite gradients.
void update_theta(std::vector<double>& theta, const std::vector<double>& ghat,
                  ThetaOptimizer& opt);

}  // namespace piars::ars
