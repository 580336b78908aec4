#pragma once

// Terrain-aware scripted controller used as a solvability oracle in tests.
// It reads the heightfield directly (no vision), so it bounds what a policy
// with perfect perception could do.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "piars/envs.hpp"

namespace piars::testutil {

inline constexpr int kPairIdx[2][2] = {{0, 3}, {1, 2}};
inline constexpr double kHipOff[4][2] = {{env::kHipX, env::kHipY},
                                         {env::kHipX, -env::kHipY},
                                         {-env::kHipX, env::kHipY},
                                         {-env::kHipX, -env::kHipY}};

// One action of the stepping-stones / moving-platforms oracle.
inline std::vector<double> scripted_terrain_action(const env::Environment& e) {
  const auto& st = e.state();
  const int swing = (st.tick / 4) % 2;
  std::vector<double> a(12, 0.0);
  double best = -1e9, bdx0 = 0, bdx1 = 0, bcom = 0.45;
  double fb = 1e9, fbdx0 = 0, fbdx1 = 0, fbcom = 0.45;
  for (double dx0 = 0.1; dx0 >= -0.05; dx0 -= 0.0125)
    for (double dx1 = 0.1; dx1 >= -0.05; dx1 -= 0.0125) {
      const double dxs[2] = {dx0, dx1};
      double dh[2];
      bool ok = true;
      for (int k = 0; k < 2 && ok; ++k) {
        const int i = kPairIdx[swing][k];
        const double tx = st.px + kHipOff[i][0] + env::kStrideGain * dxs[k];
        const double ty = st.py + kHipOff[i][1];
        const double t = st.time + 0.05;
        auto s = e.field().surface_height(tx, ty, t);
        auto s1 = e.field().surface_height(tx - 0.03, ty, t);
        auto s2 = e.field().surface_height(tx + 0.03, ty, t);
        if (!s || !s1 || !s2) {
          ok = false;
          break;
        }
        dh[k] = *s - st.foot[i][2];
      }
      if (!ok) continue;
      const double md = (dh[0] + dh[1]) / 2.0;
      const double com = std::clamp(0.45 - md / env::kComGain, 0.42, 0.47);
      const double mis = std::abs(md - env::kComGain * (0.45 - com));
      if (mis < fb) {
        fb = mis;
        fbdx0 = dx0;
        fbdx1 = dx1;
        fbcom = com;
      }
      if (mis > 0.0799) continue;
      if (dx0 + dx1 > best) {
        best = dx0 + dx1;
        bdx0 = dx0;
        bdx1 = dx1;
        bcom = com;
      }
    }
  if (best < -1e8) {
    bdx0 = fbdx0;
    bdx1 = fbdx1;
    bcom = fbcom;
  }
  a[0] = bdx0;
  a[3] = bdx1;
  a[8] = bcom;
  return a;
}

struct ScriptedOutcome {
  double ret = 0.0;
  int steps = 0;
  std::string reason;
};

inline ScriptedOutcome run_scripted_terrain(env::Environment& e, std::uint64_t seed) {
  e.reset(seed);
  ScriptedOutcome out;
  while (true) {
    auto r = e.step(scripted_terrain_action(e));
    out.ret += r.reward;
    ++out.steps;
    if (r.done) {
      out.reason = r.reason;
      break;
    }
  }
  return out;
}

// Constant-action episode (used for the blind-policy ceiling).
inline ScriptedOutcome run_constant(env::Environment& e, std::uint64_t seed,
                                    const std::vector<double>& a) {
  e.reset(seed);
  ScriptedOutcome out;
  while (true) {
    auto r = e.step(a);
    out.ret += r.reward;
    ++out.steps;
    if (r.done) {
      out.reason = r.reason;
      break;
    }
  }
  return out;
}

}  // namespace piars::testutil
