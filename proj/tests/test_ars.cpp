#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "piars/ars.hpp"
#include "piars/tensor.hpp"

using namespace piars;
using namespace piars::ars;

namespace {

// Independent oracle: materialize all directions, sort by max(R+, R-)
// descending with lower-index tie-break, sum the top M explicitly.
std::vector<double> oracle_gradient(const std::vector<ReturnPair>& returns,
                                    const PerturbationSet& perts, const ArsConfig& cfg) {
  std::vector<int> idx(returns.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return std::max(returns[a].plus, returns[a].minus) >
           std::max(returns[b].plus, returns[b].minus);
  });
  const int m = std::min<int>(cfg.top_directions, static_cast<int>(returns.size()));
  std::vector<double> g(static_cast<std::size_t>(perts.dim()), 0.0);
  for (int r = 0; r < m; ++r) {
    const int i = idx[r];
    const std::vector<double> sigma = perts.direction(i);
    for (std::size_t j = 0; j < g.size(); ++j)
      g[j] += (returns[i].plus - returns[i].minus) * sigma[j];
  }
  for (double& v : g) v *= cfg.update_coef / m;
  return g;
}

double quadratic(const std::vector<double>& theta, const std::vector<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - target[i];
    s -= d * d;
  }
  return s;
}

double distance(const std::vector<double>& theta, const std::vector<double>& target) {
  double s = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double d = theta[i] - target[i];
    s += d * d;
  }
  return std::sqrt(s);
}

// Full deterministic ARS loop on the analytic objective; returns the best
// distance to the optimum seen over the run.
double run_ars_on_quadratic(const ArsConfig& cfg, const std::vector<double>& target,
                            int iterations, std::uint64_t seed) {
  std::vector<double> theta(target.size(), 0.0);
  ThetaOptimizer opt;
  opt.momentum = cfg.momentum;
  double best = distance(theta, target);
  for (int it = 0; it < iterations; ++it) {
    PerturbationSet perts =
        sample_perturbations(cfg, mix64(seed, static_cast<std::uint64_t>(it)),
                             static_cast<int>(theta.size()));
    std::vector<ReturnPair> returns(static_cast<std::size_t>(perts.count()));
    for (int i = 0; i < perts.count(); ++i) {
      std::vector<double> plus = theta, minus = theta;
      perts.add_direction(i, 1.0, plus);
      perts.add_direction(i, -1.0, minus);
      returns[i].plus = quadratic(plus, target);
      returns[i].minus = quadratic(minus, target);
    }
    update_theta(theta, estimate_gradient(returns, perts, cfg), opt);
    best = std::min(best, distance(theta, target));
  }
  return best;
}

}  // namespace

TEST_CASE("perturbation sets are reproducible from the seed alone") {
  ArsConfig cfg;
  cfg.num_perturbations = 8;
  cfg.top_directions = 4;
  cfg.perturb_scale = 0.02;
  PerturbationSet a = sample_perturbations(cfg, 42, 10);
  PerturbationSet b = sample_perturbations(cfg, 42, 10);
  for (int i = 0; i < 8; ++i) CHECK(a.direction(i) == b.direction(i));
  PerturbationSet c = sample_perturbations(cfg, 43, 10);
  CHECK(a.direction(0) != c.direction(0));
  // directions are mutually distinct within a set
  CHECK(a.direction(0) != a.direction(1));
}

TEST_CASE("scale zero produces all-zero directions") {
  ArsConfig cfg;
  cfg.num_perturbations = 4;
  cfg.top_directions = 4;
  cfg.perturb_scale = 0.0;
  PerturbationSet p = sample_perturbations(cfg, 7, 5);
  for (int i = 0; i < 4; ++i)
    for (double v : p.direction(i)) CHECK(v == 0.0);
}

TEST_CASE("empirical per-component std is within 5% of the scale") {
  ArsConfig cfg;
  cfg.num_perturbations = 100;
  cfg.top_directions = 100;
  cfg.perturb_scale = 0.02;
  const int dim = 1000;  // N * D = 1e5 samples
  PerturbationSet p = sample_perturbations(cfg, 5, dim);
  double ss = 0.0;
  std::size_t n = 0;
  for (int i = 0; i < p.count(); ++i)
    for (double v : p.direction(i)) {
      ss += v * v;
      ++n;
    }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  CHECK(sd == doctest::Approx(cfg.perturb_scale).epsilon(0.05));
}

TEST_CASE("add_direction accumulates coef * sigma_i") {
  ArsConfig cfg;
  cfg.num_perturbations = 3;
  cfg.top_directions = 3;
  PerturbationSet p = sample_perturbations(cfg, 9, 6);
  std::vector<double> acc(6, 1.0);
  p.add_direction(2, -2.5, acc);
  const std::vector<double> sigma = p.direction(2);
  for (int j = 0; j < 6; ++j) CHECK(acc[j] == doctest::Approx(1.0 - 2.5 * sigma[j]).epsilon(1e-12));
  CHECK_THROWS_AS(p.add_direction(3, 1.0, acc), grad::shape_error);
  std::vector<double> wrong(5, 0.0);
  CHECK_THROWS_AS(p.add_direction(0, 1.0, wrong), grad::shape_error);
}

TEST_CASE("rank_directions orders by max return, ties to the lower index") {
  std::vector<ReturnPair> r = {{1.0, 5.0}, {2.0, 2.0}, {5.0, -3.0}, {4.0, 4.0}};
  // keys: 5, 2, 5, 4 -> order 0, 2, 3, 1 (0 beats 2 on the tie)
  CHECK(rank_directions(r) == std::vector<int>{0, 2, 3, 1});
}

TEST_CASE("identical antithetic returns produce a zero gradient") {
  ArsConfig cfg;
  cfg.num_perturbations = 6;
  cfg.top_directions = 3;
  PerturbationSet p = sample_perturbations(cfg, 11, 8);
  std::vector<ReturnPair> r(6, ReturnPair{3.0, 3.0});
  for (double g : estimate_gradient(r, p, cfg)) CHECK(g == 0.0);
}

TEST_CASE("single direction reduces to the bare formula") {
  ArsConfig cfg;
  cfg.num_perturbations = 1;
  cfg.top_directions = 1;
  cfg.update_coef = 1.0;
  PerturbationSet p = sample_perturbations(cfg, 13, 4);
  std::vector<ReturnPair> r = {{2.0, 0.0}};
  const std::vector<double> g = estimate_gradient(r, p, cfg);
  const std::vector<double> sigma = p.direction(0);
  for (int j = 0; j < 4; ++j) CHECK(g[j] == doctest::Approx(2.0 * sigma[j]).epsilon(1e-12));
}

TEST_CASE("estimate_gradient matches the explicit sort-and-sum oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    ArsConfig cfg;
    cfg.num_perturbations = 4 + rng.uniform_int(13);
    cfg.top_directions = 1 + rng.uniform_int(cfg.num_perturbations);
    cfg.perturb_scale = 0.05;
    cfg.update_coef = rng.uniform(0.01, 2.0);
    PerturbationSet p = sample_perturbations(cfg, 100 + trial, 7);
    std::vector<ReturnPair> r(static_cast<std::size_t>(cfg.num_perturbations));
    for (auto& pr : r) {
      pr.plus = rng.uniform(-10.0, 10.0);
      pr.minus = rng.uniform(-10.0, 10.0);
    }
    const auto got = estimate_gradient(r, p, cfg);
    const auto want = oracle_gradient(r, p, cfg);
    for (std::size_t j = 0; j < got.size(); ++j)
      CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-10));
  }
}

TEST_CASE("hand-specified N=4 M=2 case") {
  ArsConfig cfg;
  cfg.num_perturbations = 4;
  cfg.top_directions = 2;
  cfg.update_coef = 0.5;
  cfg.perturb_scale = 0.1;
  PerturbationSet p = sample_perturbations(cfg, 21, 3);
  // keys: max -> 7 (i=1), 6 (i=3), 5 (i=0), 1 (i=2); top 2 are i=1 and i=3
  std::vector<ReturnPair> r = {{5.0, 2.0}, {7.0, 1.0}, {1.0, 0.0}, {-2.0, 6.0}};
  const auto g = estimate_gradient(r, p, cfg);
  const auto s1 = p.direction(1);
  const auto s3 = p.direction(3);
  for (int j = 0; j < 3; ++j)
    CHECK(g[j] == doctest::Approx(0.25 * (6.0 * s1[j] + (-8.0) * s3[j])).epsilon(1e-12));
}

TEST_CASE("gradient estimate is linear in returns and shift-invariant") {
  ArsConfig cfg;
  cfg.num_perturbations = 10;
  cfg.top_directions = 4;
  PerturbationSet p = sample_perturbations(cfg, 23, 6);
  Rng rng(29);
  std::vector<ReturnPair> r(10);
  for (auto& pr : r) {
    pr.plus = rng.uniform(-5.0, 5.0);
    pr.minus = rng.uniform(-5.0, 5.0);
  }
  const auto base = estimate_gradient(r, p, cfg);

  std::vector<ReturnPair> scaled = r, shifted = r;
  for (auto& pr : scaled) {
    pr.plus *= 3.0;
    pr.minus *= 3.0;
  }
  for (auto& pr : shifted) {
    pr.plus += 100.0;
    pr.minus += 100.0;
  }
  const auto gs = estimate_gradient(scaled, p, cfg);
  const auto gh = estimate_gradient(shifted, p, cfg);
  for (std::size_t j = 0; j < base.size(); ++j) {
    CHECK(gs[j] == doctest::Approx(3.0 * base[j]).epsilon(1e-10));
    CHECK(gh[j] == doctest::Approx(base[j]).epsilon(1e-10));
  }
}

TEST_CASE("M = N recovers the unranked vanilla antithetic estimator") {
  ArsConfig cfg;
  cfg.num_perturbations = 8;
  cfg.top_directions = 8;
  cfg.update_coef = 1.25;
  PerturbationSet p = sample_perturbations(cfg, 31, 5);
  Rng rng(37);
  std::vector<ReturnPair> r(8);
  for (auto& pr : r) {
    pr.plus = rng.uniform(-1.0, 1.0);
    pr.minus = rng.uniform(-1.0, 1.0);
  }
  std::vector<double> vanilla(5, 0.0);
  for (int i = 0; i < 8; ++i) {
    const auto s = p.direction(i);
    for (int j = 0; j < 5; ++j) vanilla[j] += (r[i].plus - r[i].minus) * s[j] * cfg.update_coef / 8.0;
  }
  const auto got = estimate_gradient(r, p, cfg);
  for (int j = 0; j < 5; ++j) CHECK(got[j] == doctest::Approx(vanilla[j]).epsilon(1e-10));
}

TEST_CASE("non-finite returns abort the iteration") {
  ArsConfig cfg;
  cfg.num_perturbations = 2;
  cfg.top_directions = 1;
  PerturbationSet p = sample_perturbations(cfg, 41, 3);
  std::vector<ReturnPair> r = {{1.0, 2.0}, {std::nan(""), 0.0}};
  CHECK_THROWS_AS(estimate_gradient(r, p, cfg), std::runtime_error);
  std::vector<ReturnPair> missing = {{1.0, 2.0}};
  CHECK_THROWS_AS(estimate_gradient(missing, p, cfg), grad::shape_error);
}

TEST_CASE("update_theta: plain ascent adds exactly ghat; zero is a no-op") {
  std::vector<double> theta = {1.0, -2.0, 3.0};
  ThetaOptimizer opt;
  update_theta(theta, {0.0, 0.0, 0.0}, opt);
  CHECK(theta == std::vector<double>{1.0, -2.0, 3.0});
  update_theta(theta, {0.5, -0.25, 1.0}, opt);
  CHECK(theta == std::vector<double>{1.5, -2.25, 4.0});
}

TEST_CASE("update_theta: heavy-ball momentum accumulates velocity") {
  std::vector<double> theta = {0.0};
  ThetaOptimizer opt;
  opt.momentum = 0.5;
  update_theta(theta, {1.0}, opt);  // v = 1, theta = 1
  CHECK(theta[0] == doctest::Approx(1.0));
  update_theta(theta, {1.0}, opt);  // v = 1.5, theta = 2.5
  CHECK(theta[0] == doctest::Approx(2.5));
}

TEST_CASE("update_theta rejects non-finite gradients without mutating theta") {
  std::vector<double> theta = {1.0, 2.0};
  ThetaOptimizer opt;
  CHECK_THROWS_AS(update_theta(theta, {0.1, std::nan("")}, opt), std::runtime_error);
  CHECK(theta == std::vector<double>{1.0, 2.0});
  CHECK_THROWS_AS(update_theta(theta, {0.1}, opt), grad::shape_error);
}

TEST_CASE("full ARS loop drives a 32-d quadratic to its optimum") {
  Rng rng(43);
  std::vector<double> target(32);
  for (auto& v : target) v = rng.uniform(-0.5, 0.5);
  ArsConfig cfg;
  cfg.num_perturbations = 64;
  cfg.top_directions = 32;
  cfg.perturb_scale = 0.05;
  cfg.update_coef = 10.0;
  CHECK(run_ars_on_quadratic(cfg, target, 200, 1234) < 1e-2);
}

TEST_CASE("normalized-returns variant also solves the quadratic") {
  Rng rng(47);
  std::vector<double> target(32);
  for (auto& v : target) v = rng.uniform(-0.1, 0.1);
  ArsConfig cfg;
  cfg.num_perturbations = 64;
  cfg.top_directions = 32;
  cfg.perturb_scale = 0.05;
  cfg.update_coef = 0.05;
  cfg.normalize_returns = true;
  CHECK(run_ars_on_quadratic(cfg, target, 200, 77) < 1e-2);
}

TEST_CASE("full-loop determinism: fixed seeds give a bit-identical theta trajectory") {
  Rng rng(53);
  std::vector<double> target(8);
  for (auto& v : target) v = rng.uniform(-0.5, 0.5);
  ArsConfig cfg;
  cfg.num_perturbations = 16;
  cfg.top_directions = 8;
  cfg.perturb_scale = 0.05;
  cfg.update_coef = 5.0;
  auto run = [&] {
    std::vector<double> theta(8, 0.0);
    ThetaOptimizer opt;
    for (int it = 0; it < 20; ++it) {
      PerturbationSet perts = sample_perturbations(cfg, mix64(99, it), 8);
      std::vector<ReturnPair> returns(16);
      for (int i = 0; i < 16; ++i) {
        std::vector<double> plus = theta, minus = theta;
        perts.add_direction(i, 1.0, plus);
        perts.add_direction(i, -1.0, minus);
        returns[i].plus = quadratic(plus, target);
        returns[i].minus = quadratic(minus, target);
      }
      update_theta(theta, estimate_gradient(returns, perts, cfg), opt);
    }
    return theta;
  };
  CHECK(run() == run());
}
