#include "piars/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <stdexcept>

namespace piars::env {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kStoneThickness = 0.3;  // rendered stone column depth below the top
constexpr double kGoalRadius = 0.3;      // navigation success distance, m

// Trot pairs: phase-0 pair is {FL, RR}, phase-pi pair is {FR, RL}.
constexpr int kPair[2][2] = {{0, 3}, {1, 2}};
constexpr double kHip[4][2] = {
    {kHipX, kHipY}, {kHipX, -kHipY}, {-kHipX, kHipY}, {-kHipX, -kHipY}};

void rotate(double c, double s, double x, double y, double& ox, double& oy) {
  ox = c * x - s * y;
  oy = s * x + c * y;
}
}  // namespace

std::string task_name(Task t) {
  switch (t) {
    case Task::stepping_stones: return "stepping_stones";
    case Task::quincuncial_piles: return "quincuncial_piles";
    case Task::moving_platforms: return "moving_platforms";
    case Task::navigation: return "navigation";
  }
  throw std::runtime_error("unknown task");
}

Task task_from_name(const std::string& name) {
  if (name == "stepping_stones") return Task::stepping_stones;
  if (name == "quincuncial_piles") return Task::quincuncial_piles;
  if (name == "moving_platforms") return Task::moving_platforms;
  if (name == "navigation") return Task::navigation;
  throw std::runtime_error("unknown task name: " + name);
}

double MotionSpec::offset(double t) const {
  if (axis == none) return 0.0;
  return magnitude * std::sin(2.0 * kPi * frequency * t + phase);
}

std::optional<double> HeightField::surface_height(double x, double y, double t) const {
  if (task == Task::navigation) {
    if (x >= floor_x0 && x <= floor_x1 && y >= floor_y0 && y <= floor_y1) return 0.0;
    return std::nullopt;
  }
  const double c = std::cos(rotation), s = std::sin(rotation);
  double xt, yt;
  rotate(c, -s, x, y, xt, yt);  // world -> terrain
  std::optional<double> best;
  for (const Stone& st : stones) {
    const double oy = st.motion.axis == MotionSpec::horizontal ? st.motion.offset(t) : 0.0;
    const double oz = st.motion.axis == MotionSpec::vertical ? st.motion.offset(t) : 0.0;
    if (xt >= st.x0 && xt <= st.x1 && yt >= st.y0 + oy && yt <= st.y1 + oy) {
      const double h = st.height + oz;
      if (!best || h > *best) best = h;
    }
  }
  return best;
}

int HeightField::stone_at(double x, double y, double t) const {
  const double c = std::cos(rotation), s = std::sin(rotation);
  double xt, yt;
  rotate(c, -s, x, y, xt, yt);
  int best = -1;
  double best_h = -kInf;
  for (std::size_t i = 0; i < stones.size(); ++i) {
    const Stone& st = stones[i];
    const double oy = st.motion.axis == MotionSpec::horizontal ? st.motion.offset(t) : 0.0;
    const double oz = st.motion.axis == MotionSpec::vertical ? st.motion.offset(t) : 0.0;
    if (xt >= st.x0 && xt <= st.x1 && yt >= st.y0 + oy && yt <= st.y1 + oy &&
        st.height + oz > best_h) {
      best = static_cast<int>(i);
      best_h = st.height + oz;
    }
  }
  return best;
}

bool HeightField::blocked_at(double x, double y) const {
  if (task != Task::navigation) return false;
  for (const Stone& st : stones)
    if (x >= st.x0 && x <= st.x1 && y >= st.y0 && y <= st.y1) return true;
  return false;
}

ActionSpec default_action_spec() {
  ActionSpec spec;
  for (int k = 0; k < 2; ++k) {
    const std::string f = k == 0 ? "foot_a_" : "foot_b_";
    spec.dims.push_back({f + "dx", -0.05, 0.1});
    spec.dims.push_back({f + "dy", -0.05, 0.05});
    spec.dims.push_back({f + "dz", -0.03, 0.03});
  }
  spec.dims.push_back({"swing_height_a", 0.05, 0.1});
  spec.dims.push_back({"swing_height_b", 0.05, 0.1});
  spec.dims.push_back({"com_height", 0.42, 0.47});
  spec.dims.push_back({"base_roll", -0.1, 0.1});
  spec.dims.push_back({"base_pitch", -0.2, 0.2});
  spec.dims.push_back({"twist_speed", -0.2, 0.2});
  return spec;
}

double terrain_reward(double vpx, double vmax, double yaw, double w) {
  return std::clamp(vpx, -vmax, vmax) - w * std::abs(yaw);
}

namespace {

HeightField gen_stepping_stones(const EnvConfig& cfg, Rng& rng, bool flat, bool moving) {
  HeightField f;
  f.task = moving ? Task::moving_platforms : Task::stepping_stones;
  double x = 0.0, h = 0.5;
  for (int i = 0; i < cfg.num_stones; ++i) {
    Stone st;
    const double len = rng.uniform(cfg.len_lo, cfg.len_hi);
    const double wid = rng.uniform(cfg.width_lo, cfg.width_hi);
    st.x0 = x;
    st.x1 = x + len;
    st.y0 = -wid / 2.0;
    st.y1 = wid / 2.0;
    st.height = h;
    if (i + 1 < cfg.num_stones) {
      st.gap_after = rng.uniform(cfg.gap_lo, cfg.gap_hi);
      if (!flat) {
        st.height_offset = rng.uniform(cfg.off_lo, cfg.off_hi);
        double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        if (h + sign * st.height_offset < 0.15 || h + sign * st.height_offset > 1.1)
          sign = -sign;
        h += sign * st.height_offset;
      }
    }
    x = st.x1 + st.gap_after;
    f.stones.push_back(st);
  }
  if (moving) {
    // Half of the non-start platforms move horizontally, half vertically.
    const int m = cfg.num_stones - 1;
    std::vector<MotionSpec::Axis> axes(m);
    for (int i = 0; i < m; ++i)
      axes[i] = i < (m + 1) / 2 ? MotionSpec::horizontal : MotionSpec::vertical;
    for (int i = m - 1; i > 0; --i) std::swap(axes[i], axes[rng.uniform_int(i + 1)]);
    for (int i = 1; i < cfg.num_stones; ++i) {
      MotionSpec& ms = f.stones[i].motion;
      ms.axis = axes[i - 1];
      ms.magnitude = rng.uniform(cfg.mp_mag_lo, cfg.mp_mag_hi);
      ms.frequency = rng.uniform(cfg.mp_freq_lo, cfg.mp_freq_hi);
      ms.phase = rng.uniform(0.0, 2.0 * kPi);
    }
  }
  f.start_x = (f.stones.front().x0 + f.stones.front().x1) / 2.0;
  f.start_y = 0.0;
  f.start_h = f.stones.front().height;
  f.end_x = (f.stones.back().x0 + f.stones.back().x1) / 2.0;
  return f;
}

HeightField gen_quincuncial(const EnvConfig& cfg, Rng& rng) {
  HeightField f;
  f.task = Task::quincuncial_piles;
  f.rotation = rng.uniform(-cfg.q_rot, cfg.q_rot);
  Stone start;
  start.x0 = -0.85;
  start.x1 = -0.05;
  start.y0 = -0.5;
  start.y1 = 0.5;
  start.height = 0.5;
  f.stones.push_back(start);
  const int cols = 18, rows = 7;
  double x = 0.0;
  for (int cI = 0; cI < cols; ++cI) {
    double y = -1.0 + (cI % 2 == 1 ? 0.145 : 0.0);  // quincunx stagger
    for (int r = 0; r < rows; ++r) {
      Stone st;
      st.x0 = x;
      st.x1 = x + 0.15;
      st.y0 = y;
      st.y1 = y + 0.15;
      st.height = 0.5 + cfg.q_height_std * rng.normal();
      f.stones.push_back(st);
      y = st.y1 + rng.uniform(cfg.q_sep_lo, cfg.q_sep_hi);
    }
    x += 0.15 + rng.uniform(cfg.q_sep_lo, cfg.q_sep_hi);
  }
  f.start_x = -0.45;
  f.start_y = 0.0;
  f.start_h = 0.5;
  f.end_x = x - 0.15 / 2.0;
  return f;
}

HeightField gen_navigation(const EnvConfig& cfg, Rng& rng, bool& ok) {
  HeightField f;
  f.task = Task::navigation;
  f.has_floor = true;
  f.floor_x0 = 0.0;
  f.floor_x1 = 12.0;
  f.floor_y0 = 0.0;
  f.floor_y1 = 10.0;
  f.start_x = 1.2;
  f.start_y = 5.0;
  f.goal_x = rng.uniform(8.5, 10.5);
  f.goal_y = rng.uniform(1.5, 8.5);
  const int n = cfg.nav_obstacles;
  for (int i = 0; i < n; ++i) {
    double len, wid, hgt;
    if (i < n / 5) {  // 20%: sofa-sized
      len = rng.uniform(1.6, 2.0);
      wid = rng.uniform(0.7, 1.0);
      hgt = rng.uniform(0.4, 1.2);
    } else if (i < n / 5 + (2 * n) / 5) {  // 40%: chair-sized
      len = rng.uniform(0.5, 0.8);
      wid = rng.uniform(0.5, 0.8);
      hgt = rng.uniform(0.4, 1.4);
    } else {  // 40%: pillar-like
      len = rng.uniform(0.1, 0.4);
      wid = rng.uniform(0.1, 0.4);
      hgt = rng.uniform(0.8, 2.0);
    }
    if (rng.uniform() < 0.5) std::swap(len, wid);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double cx = rng.uniform(f.floor_x0 + len / 2, f.floor_x1 - len / 2);
      const double cy = rng.uniform(f.floor_y0 + wid / 2, f.floor_y1 - wid / 2);
      const double ds = std::hypot(cx - f.start_x, cy - f.start_y);
      const double dg = std::hypot(cx - f.goal_x, cy - f.goal_y);
      if (ds < 1.2 || dg < 1.2) continue;
      Stone st;
      st.x0 = cx - len / 2;
      st.x1 = cx + len / 2;
      st.y0 = cy - wid / 2;
      st.y1 = cy + wid / 2;
      st.height = hgt;
      f.stones.push_back(st);
      break;
    }
  }
  // Occupancy for the geodesic field; obstacle footprints inflated by the
  // robot's half-width so the path distance reflects traversable routes.
  OccupancyGrid& g = f.grid;
  g.ox = f.floor_x0;
  g.oy = f.floor_y0;
  g.cell = 0.1;
  g.nx = static_cast<int>(std::lround((f.floor_x1 - f.floor_x0) / g.cell));
  g.ny = static_cast<int>(std::lround((f.floor_y1 - f.floor_y0) / g.cell));
  g.blocked.assign(static_cast<std::size_t>(g.nx) * g.ny, 0);
  const double inflate = 0.2;
  for (const Stone& st : f.stones)
    for (int iy = 0; iy < g.ny; ++iy)
      for (int ix = 0; ix < g.nx; ++ix) {
        const double px = g.ox + (ix + 0.5) * g.cell, py = g.oy + (iy + 0.5) * g.cell;
        if (px >= st.x0 - inflate && px <= st.x1 + inflate && py >= st.y0 - inflate &&
            py <= st.y1 + inflate)
          g.blocked[g.idx(ix, iy)] = 1;
      }
  const int gx = g.cx(f.goal_x), gy = g.cy(f.goal_y);
  const int sx = g.cx(f.start_x), sy = g.cy(f.start_y);
  ok = g.in(gx, gy) && g.in(sx, sy) && !g.blocked[g.idx(gx, gy)] && !g.blocked[g.idx(sx, sy)];
  if (ok) {
    f.dist_field = dijkstra_field(g, gx, gy);
    ok = std::isfinite(f.dist_field[g.idx(sx, sy)]);
  }
  return f;
}

}  // namespace

HeightField generate_terrain(const EnvConfig& cfg, std::uint64_t seed) {
  for (int attempt = 0; attempt < 20; ++attempt) {
    Rng rng(mix64(seed, 0x7465727261696eULL, static_cast<std::uint64_t>(attempt)));
    bool ok = true;
    HeightField f;
    switch (cfg.task) {
      case Task::stepping_stones: f = gen_stepping_stones(cfg, rng, false, false); break;
      case Task::moving_platforms: f = gen_stepping_stones(cfg, rng, true, true); break;
      case Task::quincuncial_piles: f = gen_quincuncial(cfg, rng); break;
      case Task::navigation: f = gen_navigation(cfg, rng, ok); break;
    }
    if (!ok) continue;
    // The initial stance must be fully supported.
    const double c = std::cos(f.rotation), s = std::sin(f.rotation);
    bool stance_ok = true;
    for (const auto& hip : kHip) {
      double wx, wy;
      rotate(c, s, f.start_x + hip[0], f.start_y + hip[1], wx, wy);
      if (!f.surface_height(wx, wy, 0.0)) stance_ok = false;
    }
    if (stance_ok) return f;
  }
  throw std::runtime_error("terrain generation failed: no feasible sample");
}

grad::Tensor render_depth(const HeightField& f, const CameraPose& cam, int w, int h,
                          double t, double far) {
  grad::require(w > 0 && h > 0, "render_depth: bad resolution");
  // Camera basis: z_cam looks forward/down, x_cam right, y_cam image-down.
  const double ca = std::cos(cam.pitch_down), sa = std::sin(cam.pitch_down);
  const double cy = std::cos(cam.yaw), sy = std::sin(cam.yaw);
  const double fwd[3] = {cy * ca, sy * ca, -sa};
  const double right[3] = {sy, -cy, 0.0};
  const double down[3] = {-cy * sa, -sy * sa, -ca};
  const double tan_h = std::tan(cam.fov_h / 2.0);
  const double tan_v = tan_h * static_cast<double>(h) / w;

  // Collect boxes in terrain frame; the ray is rotated into that frame.
  struct Box { double lo[3], hi[3]; };
  std::vector<Box> boxes;
  if (f.has_floor)
    boxes.push_back({{f.floor_x0, f.floor_y0, -0.2}, {f.floor_x1, f.floor_y1, 0.0}});
  for (const Stone& st : f.stones) {
    const double oy = st.motion.axis == MotionSpec::horizontal ? st.motion.offset(t) : 0.0;
    const double oz = st.motion.axis == MotionSpec::vertical ? st.motion.offset(t) : 0.0;
    const double z1 = st.height + oz;
    const double z0 = f.task == Task::navigation ? 0.0 : z1 - kStoneThickness;
    boxes.push_back({{st.x0, st.y0 + oy, z0}, {st.x1, st.y1 + oy, z1}});
  }
  const double cr = std::cos(f.rotation), sr = std::sin(f.rotation);
  double ox, oy2;
  rotate(cr, -sr, cam.x, cam.y, ox, oy2);  // origin in terrain frame
  const double orig[3] = {ox, oy2, cam.z};

  grad::Tensor img({1, h, w});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const double du = tan_h * (2.0 * (u + 0.5) / w - 1.0);
      const double dv = tan_v * (2.0 * (v + 0.5) / h - 1.0);
      double dw[3];
      for (int a = 0; a < 3; ++a) dw[a] = right[a] * du + down[a] * dv + fwd[a];
      double dir[3];
      rotate(cr, -sr, dw[0], dw[1], dir[0], dir[1]);
      dir[2] = dw[2];
      // Unit camera-z parameterization: the slab parameter equals z-depth.
      double best = far;
      for (const Box& b : boxes) {
        double tmin = 1e-6, tmax = far;
        bool hit = true;
        for (int a = 0; a < 3 && hit; ++a) {
          if (std::abs(dir[a]) < 1e-12) {
            if (orig[a] < b.lo[a] || orig[a] > b.hi[a]) hit = false;
          } else {
            double t1 = (b.lo[a] - orig[a]) / dir[a];
            double t2 = (b.hi[a] - orig[a]) / dir[a];
            if (t1 > t2) std::swap(t1, t2);
            tmin = std::max(tmin, t1);
            tmax = std::min(tmax, t2);
            if (tmin > tmax) hit = false;
          }
        }
        if (hit && tmin < best) best = tmin;
      }
      img.at(0, v, u) = best;
    }
  return img;
}

grad::Tensor depth_pipeline(const grad::Tensor& raw, const NoiseConfig& noise, Rng& rng,
                            bool* all_missing_flag) {
  grad::require(raw.shape.size() == 3 && raw.shape[0] == 1, "depth_pipeline: expect 1xHxW");
  const int h = raw.shape[1], w = raw.shape[2];
  grad::require(h % 2 == 0 && w % 2 == 0, "depth_pipeline: H and W must be even");
  if (all_missing_flag) *all_missing_flag = false;

  std::vector<double> val = raw.v;
  std::vector<std::uint8_t> missing(val.size(), 0);
  if (noise.p_drop > 0.0 || noise.p_salt > 0.0) {
    for (std::size_t i = 0; i < val.size(); ++i) {
      if (rng.uniform() < noise.p_drop)
        missing[i] = 1;
      else if (rng.uniform() < noise.p_salt)
        val[i] = rng.uniform(0.0, kFarPlane);
    }
  }

  // Radius-1 diffusion in-fill: each sweep fills every missing pixel that
  // has at least one known 8-neighbor with the mean of its known neighbors.
  std::size_t left = 0;
  for (auto m : missing) left += m;
  while (left > 0) {
    std::vector<double> nv = val;
    std::vector<std::uint8_t> nm = missing;
    bool progress = false;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t i = std::size_t(y) * w + x;
        if (!missing[i]) continue;
        double sum = 0.0;
        int cnt = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int yy = y + dy, xx = x + dx;
            if ((dx == 0 && dy == 0) || yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
            const std::size_t j = std::size_t(yy) * w + xx;
            if (!missing[j]) {
              sum += val[j];
              ++cnt;
            }
          }
        if (cnt > 0) {
          nv[i] = sum / cnt;
          nm[i] = 0;
          --left;
          progress = true;
        }
      }
    val.swap(nv);
    missing.swap(nm);
    if (!progress) {  // no known pixel anywhere: fall back to the far plane
      for (std::size_t i = 0; i < val.size(); ++i)
        if (missing[i]) val[i] = kFarPlane;
      if (all_missing_flag) *all_missing_flag = true;
      break;
    }
  }

  grad::Tensor out({1, h / 2, w / 2});
  for (int y = 0; y < h / 2; ++y)
    for (int x = 0; x < w / 2; ++x)
      out.at(0, y, x) = (val[std::size_t(2 * y) * w + 2 * x] +
                         val[std::size_t(2 * y) * w + 2 * x + 1] +
                         val[std::size_t(2 * y + 1) * w + 2 * x] +
                         val[std::size_t(2 * y + 1) * w + 2 * x + 1]) /
                        4.0;
  return out;
}

std::vector<double> dijkstra_field(const OccupancyGrid& g, int goal_ix, int goal_iy) {
  grad::require(g.in(goal_ix, goal_iy), "dijkstra: goal outside grid");
  grad::require(!g.blocked[g.idx(goal_ix, goal_iy)], "dijkstra: goal cell blocked");
  std::vector<double> dist(g.blocked.size(), kInf);
  using QE = std::pair<double, int>;
  std::priority_queue<QE, std::vector<QE>, std::greater<QE>> q;
  dist[g.idx(goal_ix, goal_iy)] = 0.0;
  q.push({0.0, g.idx(goal_ix, goal_iy)});
  const double diag = g.cell * std::sqrt(2.0);
  while (!q.empty()) {
    auto [d, i] = q.top();
    q.pop();
    if (d > dist[i]) continue;
    const int ix = i % g.nx, iy = i / g.nx;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dx == 0 && dy == 0) continue;
        const int nx2 = ix + dx, ny2 = iy + dy;
        if (!g.in(nx2, ny2) || g.blocked[g.idx(nx2, ny2)]) continue;
        const double nd = d + (dx != 0 && dy != 0 ? diag : g.cell);
        if (nd < dist[g.idx(nx2, ny2)]) {
          dist[g.idx(nx2, ny2)] = nd;
          q.push({nd, g.idx(nx2, ny2)});
        }
      }
  }
  return dist;
}

double geodesic_distance(const OccupancyGrid& g, const std::vector<double>& field,
                         double x, double y) {
  int ix = std::clamp(g.cx(x), 0, g.nx - 1);
  int iy = std::clamp(g.cy(y), 0, g.ny - 1);
  if (std::isfinite(field[g.idx(ix, iy)])) return field[g.idx(ix, iy)];
  // Query from inside an obstacle footprint: take the nearest informed cell.
  for (int r = 1; r <= 8; ++r) {
    double best = kInf;
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx) {
        if (std::max(std::abs(dx), std::abs(dy)) != r) continue;
        const int jx = ix + dx, jy = iy + dy;
        if (g.in(jx, jy) && std::isfinite(field[g.idx(jx, jy)]))
          best = std::min(best, field[g.idx(jx, jy)]);
      }
    if (std::isfinite(best)) return best;
  }
  return kInf;
}

Environment::Environment(EnvConfig cfg) : cfg_(std::move(cfg)) {
  grad::require(cfg_.episode_limit > 0 && cfg_.dt > 0, "env: bad config");
}

std::optional<std::string> Environment::check_termination(const EnvState& st) {
  if (st.pz < 0.15) return "low_com";
  if (std::abs(st.pitch) > 1.0) return "pitch";
  if (std::abs(st.roll) > 0.3) return "roll";
  const double c = std::cos(st.yaw), s = std::sin(st.yaw);
  for (int i = 0; i < 4; ++i) {
    const double dx = st.foot[i][0] - st.px, dy = st.foot[i][1] - st.py;
    const double bx = c * dx + s * dy, by = -s * dx + c * dy;
    if (std::hypot(bx - kHip[i][0], by - kHip[i][1]) > kReachLimit) return "reach";
  }
  return std::nullopt;
}

Observation Environment::reset(std::uint64_t seed) {
  seed_ = seed;
  field_ = generate_terrain(cfg_, seed);
  st_ = EnvState{};
  const double c = std::cos(field_.rotation), s = std::sin(field_.rotation);
  rotate(c, s, field_.start_x, field_.start_y, st_.px, st_.py);
  st_.yaw = field_.rotation;
  st_.pz = kNominalCom;
  st_.last_land_com = kNominalCom;
  for (int i = 0; i < 4; ++i) {
    double hx, hy;
    rotate(std::cos(st_.yaw), std::sin(st_.yaw), kHip[i][0], kHip[i][1], hx, hy);
    st_.foot[i][0] = st_.px + hx;
    st_.foot[i][1] = st_.py + hy;
    auto surf = field_.surface_height(st_.foot[i][0], st_.foot[i][1], 0.0);
    st_.foot[i][2] = surf ? *surf : field_.start_h;
    st_.foot_stone[i] = field_.stone_at(st_.foot[i][0], st_.foot[i][1], 0.0);
    st_.contact[i] = 1.0;
  }
  for (int p = 0; p < 2; ++p)
    for (int k = 0; k < 2; ++k)
      st_.phase[kPair[p][k]] = 2.0 * kPi * ((p * 4) % kGaitPeriod) / kGaitPeriod;
  st_.a_prev.assign(default_action_spec().size(), 0.0);
  if (cfg_.task == Task::navigation) {
    st_.goal_x = field_.goal_x;
    st_.goal_y = field_.goal_y;
    last_goal_dist_ = goal_distance();
  }
  steps_ = 0;
  done_ = false;
  front_hist_.clear();
  rear_hist_.clear();
  return observe();
}

StepResult Environment::step(const std::vector<double>& action) {
  grad::require(!done_, "env: step after episode end");
  const ActionSpec spec = default_action_spec();
  grad::require(action.size() == spec.size(), "env: action dimension mismatch");
  StepResult res;
  std::vector<double> a = action;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double cl = std::clamp(a[i], spec.dims[i].lower, spec.dims[i].upper);
    if (cl != a[i]) res.clamped = true;
    a[i] = cl;
  }

  ++st_.tick;
  st_.time += cfg_.dt;
  ++steps_;
  const int swing = ((st_.tick - 1) / 4) % 2;
  const bool landing = st_.tick % 4 == 0;
  for (int p = 0; p < 2; ++p)
    for (int k = 0; k < 2; ++k) {
      const int i = kPair[p][k];
      st_.phase[i] = 2.0 * kPi * ((st_.tick + p * 4) % kGaitPeriod) / kGaitPeriod;
      st_.contact[i] = (p == swing && !landing) ? 0.0 : 1.0;
    }

  st_.yaw += a[11] * cfg_.dt;

  // Stance feet ride their platforms.
  for (int i = 0; i < 4; ++i) {
    const int si = st_.foot_stone[i];
    if (si < 0 || si >= static_cast<int>(field_.stones.size())) continue;
    const Stone& stn = field_.stones[si];
    if (stn.motion.axis == MotionSpec::horizontal) {
      const double dy = stn.motion.offset(st_.time) - stn.motion.offset(st_.time - cfg_.dt);
      st_.foot[i][1] += dy;
    } else if (stn.motion.axis == MotionSpec::vertical) {
      st_.foot[i][2] = stn.height + stn.motion.offset(st_.time);
    }
  }

  std::string fall;
  if (landing) {
    const double s_old =
        (st_.foot[kPair[swing][0]][2] + st_.foot[kPair[swing][1]][2]) / 2.0;
    const double cy = std::cos(st_.yaw), sy = std::sin(st_.yaw);
    for (int k = 0; k < 2 && fall.empty(); ++k) {
      const int i = kPair[swing][k];
      const double off_x = kHip[i][0] + kStrideGain * a[3 * k];
      const double off_y = kHip[i][1] + a[3 * k + 1];
      double wx, wy;
      rotate(cy, sy, off_x, off_y, wx, wy);
      const double tx = st_.px + wx, ty = st_.py + wy;
      if (cfg_.task == Task::navigation && field_.blocked_at(tx, ty)) {
        fall = "obstacle";
        break;
      }
      auto surf = field_.surface_height(tx, ty, st_.time);
      if (!surf) {
        fall = "gap";
        break;
      }
      st_.foot[i][0] = tx;
      st_.foot[i][1] = ty;
      st_.foot[i][2] = *surf;
      st_.foot_stone[i] = field_.stone_at(tx, ty, st_.time);
    }
    if (fall.empty()) {
      const double s_new =
          (st_.foot[kPair[swing][0]][2] + st_.foot[kPair[swing][1]][2]) / 2.0;
      // Landing is stable only if the landing pair's mean height change is
      // matched by the commanded CoM height: crouching below nominal absorbs a
      // step up, extending above nominal absorbs a step down, with a lever
      // gain of kComGain.
      const double mismatch = (s_new - s_old) - kComGain * (kNominalCom - a[8]);
      if (std::abs(mismatch) > kLandingTolerance + 1e-12) fall = "height";
      st_.last_land_com = a[8];
    }
  }

  double cx = 0.0, cyf = 0.0;
  for (int i = 0; i < 4; ++i) {
    cx += st_.foot[i][0];
    cyf += st_.foot[i][1];
  }
  cx /= 4.0;
  cyf /= 4.0;
  const double npx = st_.px + 0.5 * (cx - st_.px);
  const double npy = st_.py + 0.5 * (cyf - st_.py);
  st_.vx = (npx - st_.px) / cfg_.dt;
  st_.vy = (npy - st_.py) / cfg_.dt;
  st_.px = npx;
  st_.py = npy;
  const double npz = st_.pz + 0.5 * (a[8] - st_.pz);
  st_.vz = (npz - st_.pz) / cfg_.dt;
  st_.pz = npz;

  const double zf = (st_.foot[0][2] + st_.foot[1][2]) / 2.0;
  const double zr = (st_.foot[2][2] + st_.foot[3][2]) / 2.0;
  const double zl = (st_.foot[0][2] + st_.foot[2][2]) / 2.0;
  const double zrt = (st_.foot[1][2] + st_.foot[3][2]) / 2.0;
  // Terrain-induced lean, attenuated: the stance controller absorbs half of
  // the support-height imbalance; the rest must be countered by the commanded
  // roll/pitch.
  const double pitch_t = std::atan2(0.5 * (zf - zr), 2.0 * kHipX);
  const double roll_t = std::atan2(0.5 * (zl - zrt), 2.0 * kHipY);
  const double np = 0.7 * st_.pitch + 0.3 * (a[10] + pitch_t);
  const double nr = 0.7 * st_.roll + 0.3 * (a[9] + roll_t);
  st_.pitch_rate = (np - st_.pitch) / cfg_.dt;
  st_.roll_rate = (nr - st_.roll) / cfg_.dt;
  st_.pitch = np;
  st_.roll = nr;
  st_.a_prev = a;

  if (cfg_.task == Task::navigation) {
    const double d = goal_distance();
    const double delta = last_goal_dist_ - d;
    res.reward = cfg_.goal_positive ? delta : -delta;
    last_goal_dist_ = d;
  } else {
    res.reward = terrain_reward(st_.vx, cfg_.vmax, st_.yaw, cfg_.yaw_weight);
  }

  if (!fall.empty()) {
    st_.pz = 0.05;  // the body collapses onto the terrain
    res.reason = fall;
  } else if (auto term = check_termination(st_)) {
    res.reason = *term;
  } else {
    bool success = false;
    if (cfg_.task == Task::navigation) {
      success = last_goal_dist_ <= kGoalRadius;
    } else {
      const double c = std::cos(field_.rotation), s = std::sin(field_.rotation);
      const double xt = c * st_.px + s * st_.py;
      success = xt >= field_.end_x;
    }
    if (success)
      res.reason = "success";
    else if (steps_ >= cfg_.episode_limit)
      res.reason = "limit";
  }
  res.done = !res.reason.empty();
  done_ = res.done;
  res.obs = observe();
  return res;
}

CameraPose Environment::camera_pose(CameraId cam) const {
  double support = 0.0;
  for (int i = 0; i < 4; ++i) support += st_.foot[i][2];
  support /= 4.0;
  const double zw = support + st_.pz;
  const double fwd_off = cam == CameraId::front ? 0.25 : 0.10;
  CameraPose p;
  p.x = st_.px + std::cos(st_.yaw) * fwd_off;
  p.y = st_.py + std::sin(st_.yaw) * fwd_off;
  p.z = zw;
  p.yaw = st_.yaw;
  if (cam == CameraId::front)
    p.pitch_down = cfg_.task == Task::navigation ? std::atan2(zw, 3.0) : 0.9;
  else
    p.pitch_down = kPi / 2.0;
  return p;
}

grad::Tensor Environment::render_native(CameraId cam) const {
  return render_depth(field_, camera_pose(cam), kNativeW, kNativeH, st_.time);
}

double Environment::goal_distance() const {
  grad::require(cfg_.task == Task::navigation, "goal_distance: navigation only");
  return geodesic_distance(field_.grid, field_.dist_field, st_.px, st_.py);
}

std::vector<double> Environment::proprio() const {
  std::vector<double> v = {st_.pz, st_.roll, st_.pitch, st_.yaw, st_.vx, st_.vy,
                           st_.vz, st_.roll_rate, st_.pitch_rate};
  const double c = std::cos(st_.yaw), s = std::sin(st_.yaw);
  for (int i = 0; i < 4; ++i) {
    const double dx = st_.foot[i][0] - st_.px, dy = st_.foot[i][1] - st_.py;
    v.push_back(c * dx + s * dy);
    v.push_back(-s * dx + c * dy);
  }
  for (int i = 0; i < 4; ++i) v.push_back(st_.contact[i]);
  for (int i = 0; i < 4; ++i) v.push_back(st_.phase[i]);
  v.push_back(static_cast<double>(st_.tick % kGaitPeriod) / kGaitPeriod);
  if (cfg_.task == Task::navigation) {
    const double gx = st_.goal_x - st_.px, gy = st_.goal_y - st_.py;
    v.push_back(c * gx + s * gy);
    v.push_back(-s * gx + c * gy);
  }
  grad::require(static_cast<int>(v.size()) == cfg_.proprio_dim(), "proprio layout drift");
  return v;
}

Observation Environment::observe() {
  const int stack = cfg_.frame_stack();
  for (int cam = 0; cam < 2; ++cam) {
    Rng rng(mix64(seed_, 0xDEB7Fu, static_cast<std::uint64_t>(st_.tick),
                  static_cast<std::uint64_t>(cam)));
    grad::Tensor frame =
        depth_pipeline(render_native(cam == 0 ? CameraId::front : CameraId::belly),
                       cfg_.noise, rng);
    auto& hist = cam == 0 ? front_hist_ : rear_hist_;
    hist.push_back(std::move(frame));
    while (static_cast<int>(hist.size()) < stack) hist.insert(hist.begin(), hist.front());
    while (static_cast<int>(hist.size()) > stack) hist.erase(hist.begin());
  }
  Observation obs;
  obs.front = grad::Tensor({stack, kImageH, kImageW});
  obs.rear = grad::Tensor({stack, kImageH, kImageW});
  for (int ch = 0; ch < stack; ++ch)
    for (int y = 0; y < kImageH; ++y)
      for (int x = 0; x < kImageW; ++x) {
        obs.front.at(ch, y, x) = front_hist_[ch].at(0, y, x);
        obs.rear.at(ch, y, x) = rear_hist_[ch].at(0, y, x);
      }
  obs.proprio = proprio();
  return obs;
}

}  // namespace piars::env
