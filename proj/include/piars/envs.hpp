#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "piars/rng.hpp"
#include "piars/types.hpp"

namespace piars::env {

enum class Task { stepping_stones, quincuncial_piles, moving_platforms, navigation };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

struct NoiseConfig {
  double p_drop = 0.0;  // probability a raw depth pixel is missing
  double p_salt = 0.0;  // probability a surviving pixel is replaced by a random depth
  bool operator==(const NoiseConfig&) const = default;
};

struct MotionSpec {
  enum Axis { none, horizontal, vertical };
  Axis axis = none;
  double magnitude = 0.0;  // m
  double frequency = 0.0;  // Hz
  double phase = 0.0;      // rad
  double offset(double t) const;
};

// Axis-aligned stone/box in terrain frame. Terrain tasks: walkable top at
// `height`. Navigation: obstacle column from the floor up to `height`.
struct Stone {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double height = 0;
  MotionSpec motion;
  double gap_after = 0;      // sampled gap to the next stone (stepping stones)
  double height_offset = 0;  // sampled |dh| to the next stone (stepping stones)
};

struct OccupancyGrid {
  double ox = 0, oy = 0;  // world position of cell (0, 0) corner
  double cell = 0.1;
  int nx = 0, ny = 0;
  std::vector<std::uint8_t> blocked;
  bool in(int ix, int iy) const { return ix >= 0 && ix < nx && iy >= 0 && iy < ny; }
  int idx(int ix, int iy) const { return iy * nx + ix; }
  int cx(double x) const { return static_cast<int>(std::floor((x - ox) / cell)); }
  int cy(double y) const { return static_cast<int>(std::floor((y - oy) / cell)); }
};

struct HeightField {
  Task task = Task::stepping_stones;
  double rotation = 0.0;  // whole-terrain yaw (quincuncial piles)
  std::vector<Stone> stones;
  bool has_floor = false;  // navigation: solid floor at z = 0
  double floor_x0 = 0, floor_x1 = 0, floor_y0 = 0, floor_y1 = 0;
  double start_x = 0, start_y = 0, start_h = 0, end_x = 0;
  double goal_x = 0, goal_y = 0;  // navigation
  OccupancyGrid grid;             // navigation
  std::vector<double> dist_field; // navigation: geodesic distance to goal per cell

  // Walkable surface height at a world point, or nullopt over a gap /
  // outside the terrain. Navigation obstacles are not walkable.
  std::optional<double> surface_height(double x, double y, double t) const;
  int stone_at(double x, double y, double t) const;  // topmost stone index or -1
  bool blocked_at(double x, double y) const;         // navigation obstacle footprint
};

struct EnvConfig {
  Task task = Task::stepping_stones;
  int num_stones = 20;
  int nav_obstacles = 50;
  int episode_limit = 400;
  double dt = 0.05;       // control timestep, s
  double vmax = 0.5;      // forward-velocity reward clip, m/s
  double yaw_weight = 1.0;
  NoiseConfig noise;
  bool goal_positive = true;  // navigation reward sign: positive when approaching

  // Terrain sampling ranges.
  double gap_lo = 0.05, gap_hi = 0.10;
  double off_lo = 0.13, off_hi = 0.20;
  double width_lo = 0.55, width_hi = 0.70;
  double len_lo = 0.50, len_hi = 0.80;
  double q_sep_lo = 0.13, q_sep_hi = 0.17;
  double q_height_std = 0.015;
  double q_rot = 0.1;
  double mp_mag_lo = 0.10, mp_mag_hi = 0.15;
  double mp_freq_lo = 0.4, mp_freq_hi = 1.0;

  int frame_stack() const { return task == Task::moving_platforms ? 3 : 1; }
  int proprio_dim() const { return task == Task::navigation ? 28 : 26; }
  bool operator==(const EnvConfig&) const = default;
};

struct EnvState {
  double px = 0, py = 0;          // CoM world position
  double pz = 0.45;               // CoM height above the support surface
  double roll = 0, pitch = 0, yaw = 0;
  double vx = 0, vy = 0, vz = 0;  // CoM velocity
  double roll_rate = 0, pitch_rate = 0;
  double foot[4][3] = {};         // world positions; order FL, FR, RL, RR
  int foot_stone[4] = {-1, -1, -1, -1};
  double contact[4] = {1, 1, 1, 1};
  double phase[4] = {};           // gait phase in [0, 2pi)
  std::vector<double> a_prev;
  int tick = 0;
  double time = 0.0;
  double last_land_com = 0.45;    // commanded CoM height at the previous landing
  double goal_x = 0, goal_y = 0;  // navigation
};

struct StepResult {
  Observation obs;
  double reward = 0.0;
  bool done = false;
  std::string reason;   // "", "gap", "obstacle", "height", "low_com", "pitch",
                        // "roll", "reach", "success", "limit"
  bool clamped = false; // action was out of bounds and got clipped
};

enum class CameraId { front, belly };

struct CameraPose {
  double x = 0, y = 0, z = 0;
  double yaw = 0;
  double pitch_down = 0;  // rad; pi/2 looks straight down
  double fov_h = 1.2;     // horizontal field of view, rad
};

// Robot geometry and camera constants (frozen; proprio layout depends on them).
inline constexpr double kHipX = 0.21, kHipY = 0.13;
inline constexpr double kReachLimit = 0.45;
inline constexpr double kStrideGain = 2.0;
inline constexpr double kLandingTolerance = 0.08;
inline constexpr double kComGain = 2.0;
inline constexpr double kFarPlane = 6.0;
inline constexpr int kNativeW = 64, kNativeH = 48;
inline constexpr int kImageW = 32, kImageH = 24;
inline constexpr double kNominalCom = 0.45;
inline constexpr int kGaitPeriod = 8;  // control ticks per full gait cycle

ActionSpec default_action_spec();

double terrain_reward(double vpx, double vmax, double yaw, double w);

HeightField generate_terrain(const EnvConfig& cfg, std::uint64_t seed);

grad::Tensor render_depth(const HeightField& f, const CameraPose& cam, int w, int h,
                          double t, double far = kFarPlane);

// Dropout + salt noise, radius-1 diffusion in-fill, 2x2 area downsample.
// `raw` is 1 x H x W with even H, W; the result is 1 x H/2 x W/2.
grad::Tensor depth_pipeline(const grad::Tensor& raw, const NoiseConfig& noise, Rng& rng,
                            bool* all_missing_flag = nullptr);

std::vector<double> dijkstra_field(const OccupancyGrid& g, int goal_ix, int goal_iy);
double geodesic_distance(const OccupancyGrid& g, const std::vector<double>& field,
                         double x, double y);

class Environment {
 public:
  explicit Environment(EnvConfig cfg);

  Observation reset(std::uint64_t seed);
  StepResult step(const std::vector<double>& action);

  const EnvConfig& config() const { return cfg_; }
  const EnvState& state() const { return st_; }
  EnvState& mutable_state() { return st_; }  // for tests constructing edge states
  const HeightField& field() const { return field_; }
  int steps() const { return steps_; }
  int proprio_dim() const { return cfg_.proprio_dim(); }

  static std::optional<std::string> check_termination(const EnvState& st);

  grad::Tensor render_native(CameraId cam) const;  // raw 64x48 depth
  double goal_distance() const;                    // navigation
  Observation observe();                           // pipeline + stack + proprio

 private:
  CameraPose camera_pose(CameraId cam) const;
  std::vector<double> proprio() const;

  EnvConfig cfg_;
  HeightField field_;
  EnvState st_;
  std::uint64_t seed_ = 0;
  int steps_ = 0;
  bool done_ = false;
  double last_goal_dist_ = 0;
  std::vector<grad::Tensor> front_hist_, rear_hist_;  // oldest first
};

}  // namespace piars::env
