#include "piars/experiment.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace piars::exp {

namespace {

std::string fmt_double(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string algorithm_name(Algorithm a) { return a == Algorithm::pi_ars ? "pi_ars" : "ars"; }

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "pi_ars") return Algorithm::pi_ars;
  if (name == "ars") return Algorithm::ars;
  throw std::invalid_argument("unknown algorithm: " + name);
}

void ExperimentConfig::sync_derived() {
  net.image_h = env::kImageH;
  net.image_w = env::kImageW;
  net.channels = env.frame_stack();
  net.proprio_dim = env.proprio_dim();
  net.action_dim = 12;
}

void ExperimentConfig::validate() const {
  auto req = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("config: " + what);
  };
  req(iterations >= 1, "iterations must be >= 1");
  req(trials >= 1, "trials must be >= 1");
  req(workers >= 1, "workers must be >= 1");
  req(checkpoint_every >= 1, "checkpoint_every must be >= 1");
  req(plateau_iters >= 0, "plateau_iters must be >= 0");
  req(ars.num_perturbations >= 1, "ars.num_perturbations must be >= 1");
  req(ars.top_directions >= 1 && ars.top_directions <= ars.num_perturbations,
      "ars.top_directions must be in [1, num_perturbations]");
  req(ars.perturb_scale > 0, "ars.perturb_scale must be > 0");
  req(ars.update_coef > 0, "ars.update_coef must be > 0");
  req(ars.episodes_per_eval >= 1, "ars.episodes_per_eval must be >= 1");
  req(ars.momentum >= 0 && ars.momentum < 1, "ars.momentum must be in [0, 1)");
  req(pi.batch >= 1, "pi.batch must be >= 1");
  req(pi.k >= 1, "pi.k must be >= 1");
  req(pi.lr > 0, "pi.lr must be > 0");
  req(pi.capacity >= 1, "pi.capacity must be >= 1");
  req(pi.steps_per_iter >= 0, "pi.steps_per_iter must be >= 0");
  req(net.conv_channels >= 1 && net.cam_dim >= 1 && net.z_dim >= 1 && net.aux_h >= 1 &&
          net.rnn_units >= 1 && net.head_h1 >= 1 && net.head_h2 >= 1,
      "network widths must be >= 1");
  req(env.episode_limit >= 1, "env.episode_limit must be >= 1");
  req(env.dt > 0, "env.dt must be > 0");
  req(env.num_stones >= 2, "env.num_stones must be >= 2");
  req(env.nav_obstacles >= 0, "env.nav_obstacles must be >= 0");
}

std::string serialize_config(const ExperimentConfig& c) {
  std::ostringstream out;
  auto put = [&](const std::string& key, const std::string& val) {
    out << key << " = " << val << "\n";
  };
  auto put_i = [&](const std::string& key, long long v) { put(key, std::to_string(v)); };
  auto put_d = [&](const std::string& key, double v) { put(key, fmt_double(v)); };
  auto put_b = [&](const std::string& key, bool v) { put(key, v ? "true" : "false"); };

  out << "# experiment configuration (flat key = value; '#' starts a comment)\n";
  put("task", env::task_name(c.env.task));
  put("algorithm", algorithm_name(c.algorithm));
  put_i("seed", static_cast<long long>(c.seed));
  put_i("iterations", c.iterations);
  put_i("trials", c.trials);
  put_i("workers", c.workers);
  put_i("checkpoint_every", c.checkpoint_every);
  put_i("plateau_iters", c.plateau_iters);
  put_b("checkpoint_replay", c.checkpoint_replay);

  put_i("ars.num_perturbations", c.ars.num_perturbations);
  put_i("ars.top_directions", c.ars.top_directions);
  put_d("ars.perturb_scale", c.ars.perturb_scale);
  put_d("ars.update_coef", c.ars.update_coef);
  put_i("ars.episodes_per_eval", c.ars.episodes_per_eval);
  put_b("ars.normalize_returns", c.ars.normalize_returns);
  put_d("ars.momentum", c.ars.momentum);

  put_i("pi.batch", c.pi.batch);
  put_i("pi.k", c.pi.k);
  put_d("pi.lr", c.pi.lr);
  put_i("pi.capacity", static_cast<long long>(c.pi.capacity));
  put_i("pi.steps_per_iter", c.pi.steps_per_iter);
  put_d("pi.infonce_weight", c.pi.infonce_weight);

  put_i("net.conv_channels", c.net.conv_channels);
  put_i("net.cam_dim", c.net.cam_dim);
  put_i("net.z_dim", c.net.z_dim);
  put_i("net.aux_h", c.net.aux_h);
  put_i("net.rnn_units", c.net.rnn_units);
  put_i("net.head_h1", c.net.head_h1);
  put_i("net.head_h2", c.net.head_h2);

  put_i("env.num_stones", c.env.num_stones);
  put_i("env.nav_obstacles", c.env.nav_obstacles);
  put_i("env.episode_limit", c.env.episode_limit);
  put_d("env.dt", c.env.dt);
  put_d("env.vmax", c.env.vmax);
  put_d("env.yaw_weight", c.env.yaw_weight);
  put_b("env.goal_positive", c.env.goal_positive);
  put_d("env.noise.p_drop", c.env.noise.p_drop);
  put_d("env.noise.p_salt", c.env.noise.p_salt);
  put_d("env.gap_lo", c.env.gap_lo);
  put_d("env.gap_hi", c.env.gap_hi);
  put_d("env.off_lo", c.env.off_lo);
  put_d("env.off_hi", c.env.off_hi);
  put_d("env.width_lo", c.env.width_lo);
  put_d("env.width_hi", c.env.width_hi);
  put_d("env.len_lo", c.env.len_lo);
  put_d("env.len_hi", c.env.len_hi);
  put_d("env.q_sep_lo", c.env.q_sep_lo);
  put_d("env.q_sep_hi", c.env.q_sep_hi);
  put_d("env.q_height_std", c.env.q_height_std);
  put_d("env.q_rot", c.env.q_rot);
  put_d("env.mp_mag_lo", c.env.mp_mag_lo);
  put_d("env.mp_mag_hi", c.env.mp_mag_hi);
  put_d("env.mp_freq_lo", c.env.mp_freq_lo);
  put_d("env.mp_freq_hi", c.env.mp_freq_hi);
  return out.str();
}

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: bad boolean for " + key + ": " + v);
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": missing '='");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      auto as_i = [&] { return std::stoll(val); };
      auto as_d = [&] { return std::stod(val); };
      auto as_b = [&] { return parse_bool(val, key); };
      if (key == "task") c.env.task = env::task_from_name(val);
      else if (key == "algorithm") c.algorithm = algorithm_from_name(val);
      else if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(val));
      else if (key == "iterations") c.iterations = static_cast<int>(as_i());
      else if (key == "trials") c.trials = static_cast<int>(as_i());
      else if (key == "workers") c.workers = static_cast<int>(as_i());
      else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(as_i());
      else if (key == "plateau_iters") c.plateau_iters = static_cast<int>(as_i());
      else if (key == "checkpoint_replay") c.checkpoint_replay = as_b();
      else if (key == "ars.num_perturbations") c.ars.num_perturbations = static_cast<int>(as_i());
      else if (key == "ars.top_directions") c.ars.top_directions = static_cast<int>(as_i());
      else if (key == "ars.perturb_scale") c.ars.perturb_scale = as_d();
      else if (key == "ars.update_coef") c.ars.update_coef = as_d();
      else if (key == "ars.episodes_per_eval") c.ars.episodes_per_eval = static_cast<int>(as_i());
      else if (key == "ars.normalize_returns") c.ars.normalize_returns = as_b();
      else if (key == "ars.momentum") c.ars.momentum = as_d();
      else if (key == "pi.batch") c.pi.batch = static_cast<int>(as_i());
      else if (key == "pi.k") c.pi.k = static_cast<int>(as_i());
      else if (key == "pi.lr") c.pi.lr = as_d();
      else if (key == "pi.capacity") c.pi.capacity = static_cast<std::size_t>(as_i());
      else if (key == "pi.steps_per_iter") c.pi.steps_per_iter = static_cast<int>(as_i());
      else if (key == "pi.infonce_weight") c.pi.infonce_weight = as_d();
      else if (key == "net.conv_channels") c.net.conv_channels = static_cast<int>(as_i());
      else if (key == "net.cam_dim") c.net.cam_dim = static_cast<int>(as_i());
      else if (key == "net.z_dim") c.net.z_dim = static_cast<int>(as_i());
      else if (key == "net.aux_h") c.net.aux_h = static_cast<int>(as_i());
      else if (key == "net.rnn_units") c.net.rnn_units = static_cast<int>(as_i());
      else if (key == "net.head_h1") c.net.head_h1 = static_cast<int>(as_i());
      else if (key == "net.head_h2") c.net.head_h2 = static_cast<int>(as_i());
      else if (key == "env.num_stones") c.env.num_stones = static_cast<int>(as_i());
      else if (key == "env.nav_obstacles") c.env.nav_obstacles = static_cast<int>(as_i());
      else if (key == "env.episode_limit") c.env.episode_limit = static_cast<int>(as_i());
      else if (key == "env.dt") c.env.dt = as_d();
      else if (key == "env.vmax") c.env.vmax = as_d();
      else if (key == "env.yaw_weight") c.env.yaw_weight = as_d();
      else if (key == "env.goal_positive") c.env.goal_positive = as_b();
      else if (key == "env.noise.p_drop") c.env.noise.p_drop = as_d();
      else if (key == "env.noise.p_salt") c.env.noise.p_salt = as_d();
      else if (key == "env.gap_lo") c.env.gap_lo = as_d();
      else if (key == "env.gap_hi") c.env.gap_hi = as_d();
      else if (key == "env.off_lo") c.env.off_lo = as_d();
      else if (key == "env.off_hi") c.env.off_hi = as_d();
      else if (key == "env.width_lo") c.env.width_lo = as_d();
      else if (key == "env.width_hi") c.env.width_hi = as_d();
      else if (key == "env.len_lo") c.env.len_lo = as_d();
      else if (key == "env.len_hi") c.env.len_hi = as_d();
      else if (key == "env.q_sep_lo") c.env.q_sep_lo = as_d();
      else if (key == "env.q_sep_hi") c.env.q_sep_hi = as_d();
      else if (key == "env.q_height_std") c.env.q_height_std = as_d();
      else if (key == "env.q_rot") c.env.q_rot = as_d();
      else if (key == "env.mp_mag_lo") c.env.mp_mag_lo = as_d();
      else if (key == "env.mp_mag_hi") c.env.mp_mag_hi = as_d();
      else if (key == "env.mp_freq_lo") c.env.mp_freq_lo = as_d();
      else if (key == "env.mp_freq_hi") c.env.mp_freq_hi = as_d();
      else throw std::invalid_argument("unknown config key: " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": bad value for " +
                                  key + ": " + val);
    }
  }
  c.sync_derived();
  c.validate();
  return c;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

std::string metrics_json_line(const MetricsRecord& r, const std::string& task,
                              const std::string& algorithm) {
  ordered_json j;
  j["iteration"] = r.iteration;
  j["episodes"] = r.episodes;
  j["mean_return"] = r.mean_return;
  j["max_return"] = r.max_return;
  j["min_return"] = r.min_return;
  j["infonce"] = r.infonce;
  j["reward_loss"] = r.reward_loss;
  j["pi_updates"] = r.pi_updates;
  j["grad_norm"] = r.grad_norm;
  j["wall_seconds"] = r.wall_seconds;
  j["task"] = task;
  j["algorithm"] = algorithm;
  return j.dump();
}

std::string metrics_csv_header() {
  return "iteration,episodes,mean_return,max_return,min_return,infonce,reward_loss,pi_updates,"
         "grad_norm,wall_seconds,task,algorithm";
}

std::string metrics_csv_line(const MetricsRecord& r, const std::string& task,
                             const std::string& algorithm) {
  std::ostringstream out;
  out << r.iteration << ',' << r.episodes << ',' << fmt_double(r.mean_return) << ','
      << fmt_double(r.max_return) << ',' << fmt_double(r.min_return) << ','
      << fmt_double(r.infonce) << ',' << fmt_double(r.reward_loss) << ',' << r.pi_updates << ','
      << fmt_double(r.grad_norm) << ',' << fmt_double(r.wall_seconds) << ',' << task << ','
      << algorithm;
  return out.str();
}

MetricsFile load_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  MetricsFile mf;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
      MetricsRecord r;
      r.iteration = j.at("iteration").get<int>();
      r.episodes = j.at("episodes").get<long long>();
      r.mean_return = j.at("mean_return").get<double>();
      r.max_return = j.at("max_return").get<double>();
      r.min_return = j.at("min_return").get<double>();
      r.infonce = j.at("infonce").get<double>();
      r.reward_loss = j.at("reward_loss").get<double>();
      r.pi_updates = j.at("pi_updates").get<int>();
      r.grad_norm = j.at("grad_norm").get<double>();
      r.wall_seconds = j.at("wall_seconds").get<double>();
      const std::string task = j.at("task").get<std::string>();
      const std::string alg = j.at("algorithm").get<std::string>();
      if (mf.records.empty()) {
        mf.task = task;
        mf.algorithm = alg;
      } else if (task != mf.task || alg != mf.algorithm) {
        throw std::runtime_error("inconsistent task/algorithm tag");
      }
      mf.records.push_back(r);
    } catch (const std::exception& e) {
      throw std::runtime_error("metrics parse error at " + path + ":" + std::to_string(lineno) +
                               ": " + e.what());
    }
  }
  return mf;
}

bool metrics_equal(const MetricsFile& a, const MetricsFile& b, bool ignore_wall) {
  if (a.task != b.task || a.algorithm != b.algorithm) return false;
  if (a.records.size() != b.records.size()) return false;
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    MetricsRecord x = a.records[i], y = b.records[i];
    if (ignore_wall) x.wall_seconds = y.wall_seconds = 0.0;
    if (!(x == y)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'I', 'A', 'R', 'S', 'C', 'K', 'P'};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}
std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  return v;
}

using Manifest = std::map<std::string, std::vector<double>>;

void write_container(const std::string& path, const Manifest& entries) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof kMagic);
    write_u32(out, Checkpoint::kVersion);
    write_u32(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, data] : entries) {
      write_u32(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u64(out, data.size());
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }
  fs::rename(tmp, path);
}

Manifest read_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  const std::uint32_t version = read_u32(in);
  if (version != Checkpoint::kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = read_u32(in);
  Manifest entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = read_u32(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint64_t n = read_u64(in);
    std::vector<double> data(n);
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    entries.emplace(std::move(name), std::move(data));
  }
  return entries;
}

std::vector<double> text_to_doubles(const std::string& s) {
  std::vector<double> d(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    d[i] = static_cast<double>(static_cast<unsigned char>(s[i]));
  return d;
}

std::string doubles_to_text(const std::vector<double>& d) {
  std::string s(d.size(), '\0');
  for (std::size_t i = 0; i < d.size(); ++i)
    s[i] = static_cast<char>(static_cast<unsigned char>(d[i]));
  return s;
}

std::vector<double> flatten_tensors(const std::vector<grad::Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.v.begin(), t.v.end());
  return out;
}

void unflatten_tensors(const std::vector<double>& flat, std::vector<grad::Tensor>& ts) {
  std::size_t off = 0;
  for (auto& t : ts) {
    if (off + t.v.size() > flat.size()) throw std::runtime_error("checkpoint: adam size mismatch");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(off),
              flat.begin() + static_cast<std::ptrdiff_t>(off + t.v.size()), t.v.begin());
    off += t.v.size();
  }
  if (off != flat.size()) throw std::runtime_error("checkpoint: adam size mismatch");
}

struct ObsDims {
  int image = 0;    // per-camera flattened size
  int proprio = 0;
  int actions = 0;  // action dim
};

ObsDims obs_dims(const ExperimentConfig& cfg) {
  return {cfg.net.channels * cfg.net.image_h * cfg.net.image_w, cfg.net.proprio_dim,
          cfg.net.action_dim};
}

void append_obs(std::vector<double>& out, const Observation& o) {
  out.insert(out.end(), o.front.v.begin(), o.front.v.end());
  out.insert(out.end(), o.rear.v.begin(), o.rear.v.end());
  out.insert(out.end(), o.proprio.begin(), o.proprio.end());
}

Observation read_obs(const std::vector<double>& d, std::size_t& off, const ExperimentConfig& cfg,
                     const ObsDims& dims) {
  Observation o;
  const std::vector<int> shape = {cfg.net.channels, cfg.net.image_h, cfg.net.image_w};
  o.front = grad::Tensor(shape);
  std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(off), dims.image, o.front.v.begin());
  off += static_cast<std::size_t>(dims.image);
  o.rear = grad::Tensor(shape);
  std::copy_n(d.begin() + static_cast<std::ptrdiff_t>(off), dims.image, o.rear.v.begin());
  off += static_cast<std::size_t>(dims.image);
  o.proprio.assign(d.begin() + static_cast<std::ptrdiff_t>(off),
                   d.begin() + static_cast<std::ptrdiff_t>(off + dims.proprio));
  off += static_cast<std::size_t>(dims.proprio);
  return o;
}

}  // namespace

Checkpoint init_checkpoint(const ExperimentConfig& cfg_in) {
  ExperimentConfig cfg = cfg_in;
  cfg.sync_derived();
  cfg.validate();
  Checkpoint ck;
  ck.config = cfg;
  Rng rng(mix64(cfg.seed, 0x696e6974ULL));
  ck.stack = nets::make_stack(cfg.net, rng);
  ck.theta = rollout::extract_theta(ck.stack, cfg.scope());
  ck.norm = pi::ObsNormalizer(cfg.net.proprio_dim);
  if (cfg.algorithm == Algorithm::pi_ars) {
    ck.adam.lr = cfg.pi.lr;
    ck.adam.init(nets::pi_params(ck.stack));
  }
  ck.has_replay = cfg.algorithm == Algorithm::pi_ars && cfg.checkpoint_replay;
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  Manifest m;
  m["config_text"] = text_to_doubles(serialize_config(ck.config));
  m["counters"] = {static_cast<double>(ck.iteration), static_cast<double>(ck.episodes),
                   ck.best_max_return, static_cast<double>(ck.last_improve_iter),
                   ck.has_best ? 1.0 : 0.0};
  m["theta"] = ck.theta;
  m["velocity"] = ck.velocity;
  m["normalizer"] = ck.norm.serialize();
  m["adam_step"] = {static_cast<double>(ck.adam.step)};
  m["adam_m"] = flatten_tensors(ck.adam.m);
  m["adam_v"] = flatten_tensors(ck.adam.v);

  nets::EncoderStack& stack = const_cast<nets::EncoderStack&>(ck.stack);
  nets::for_each_named_tensor(stack, [&](const std::string& name, nets::Tensor& t) {
    m["param." + name] = t.v;
  });

  std::vector<double> replay_meta = {ck.has_replay ? 1.0 : 0.0,
                                     static_cast<double>(ck.replay.size()),
                                     static_cast<double>(ck.replay_next)};
  m["replay_meta"] = std::move(replay_meta);
  if (ck.has_replay) {
    std::vector<double> data;
    const ObsDims dims = obs_dims(ck.config);
    const int k = ck.config.pi.k;
    data.reserve(ck.replay.size() *
                 static_cast<std::size_t>(2 * (2 * dims.image + dims.proprio) +
                                          k * (dims.actions + 1)));
    for (const auto& st : ck.replay) {
      append_obs(data, st.s_t);
      append_obs(data, st.s_tk);
      for (const auto& a : st.actions) data.insert(data.end(), a.begin(), a.end());
      data.insert(data.end(), st.rewards.begin(), st.rewards.end());
    }
    m["replay_data"] = std::move(data);
  }
  write_container(path, m);
}

Checkpoint load_checkpoint(const std::string& path) {
  Manifest m = read_container(path);
  auto need = [&](const std::string& name) -> std::vector<double>& {
    auto it = m.find(name);
    if (it == m.end()) throw std::runtime_error("checkpoint missing entry: " + name);
    return it->second;
  };

  Checkpoint ck;
  ck.config = parse_config(doubles_to_text(need("config_text")));
  const auto& counters = need("counters");
  if (counters.size() != 5) throw std::runtime_error("checkpoint: bad counters entry");
  ck.iteration = static_cast<int>(counters[0]);
  ck.episodes = static_cast<long long>(counters[1]);
  ck.best_max_return = counters[2];
  ck.last_improve_iter = static_cast<int>(counters[3]);
  ck.has_best = counters[4] != 0.0;

  Rng rng(0);
  ck.stack = nets::make_stack(ck.config.net, rng);
  nets::for_each_named_tensor(ck.stack, [&](const std::string& name, nets::Tensor& t) {
    const auto& data = need("param." + name);
    if (data.size() != t.v.size())
      throw std::runtime_error("checkpoint: size mismatch for param." + name);
    t.v = data;
  });

  ck.theta = need("theta");
  if (static_cast<int>(ck.theta.size()) != rollout::theta_dim(ck.stack, ck.config.scope()))
    throw std::runtime_error("checkpoint: theta dimension mismatch");
  ck.velocity = need("velocity");
  ck.norm.deserialize(need("normalizer"));

  ck.adam.lr = ck.config.pi.lr;
  ck.adam.step = static_cast<std::int64_t>(need("adam_step")[0]);
  if (!need("adam_m").empty() || ck.config.algorithm == Algorithm::pi_ars) {
    ck.adam.init(nets::pi_params(ck.stack));
    const std::int64_t step = static_cast<std::int64_t>(need("adam_step")[0]);
    unflatten_tensors(need("adam_m"), ck.adam.m);
    unflatten_tensors(need("adam_v"), ck.adam.v);
    ck.adam.step = step;  // init() reset it
  }

  const auto& rmeta = need("replay_meta");
  if (rmeta.size() != 3) throw std::runtime_error("checkpoint: bad replay_meta entry");
  ck.has_replay = rmeta[0] != 0.0;
  ck.replay_next = static_cast<std::size_t>(rmeta[2]);
  if (ck.has_replay) {
    const auto n = static_cast<std::size_t>(rmeta[1]);
    const auto& data = need("replay_data");
    const ObsDims dims = obs_dims(ck.config);
    const int k = ck.config.pi.k;
    std::size_t off = 0;
    ck.replay.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      pi::SubTrajectory st;
      st.s_t = read_obs(data, off, ck.config, dims);
      st.s_tk = read_obs(data, off, ck.config, dims);
      st.actions.resize(static_cast<std::size_t>(k));
      for (auto& a : st.actions) {
        a.assign(data.begin() + static_cast<std::ptrdiff_t>(off),
                 data.begin() + static_cast<std::ptrdiff_t>(off + dims.actions));
        off += static_cast<std::size_t>(dims.actions);
      }
      st.rewards.assign(data.begin() + static_cast<std::ptrdiff_t>(off),
                        data.begin() + static_cast<std::ptrdiff_t>(off + k));
      off += static_cast<std::size_t>(k);
      ck.replay.push_back(std::move(st));
    }
    if (off != data.size()) throw std::runtime_error("checkpoint: replay_data size mismatch");
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

std::string checkpoint_name(int iteration) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "ckpt_%06d.bin", iteration);
  return buf;
}

// Latest regular checkpoint in dir, or empty string.
std::string latest_checkpoint(const fs::path& dir) {
  std::string best;
  int best_iter = -1;
  if (!fs::exists(dir)) return best;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int it = 0;
    if (std::sscanf(name.c_str(), "ckpt_%d.bin", &it) == 1 && it > best_iter) {
      best_iter = it;
      best = entry.path().string();
    }
  }
  return best;
}

// Drops metrics records beyond `iteration` (a crash can leave the metrics a
// step ahead of the last checkpoint) and reopens both mirrors for append.
void trim_metrics(const fs::path& jsonl, const fs::path& csv, int iteration,
                  const std::string& task, const std::string& alg) {
  MetricsFile mf;
  if (fs::exists(jsonl)) mf = load_metrics(jsonl.string());
  while (!mf.records.empty() && mf.records.back().iteration > iteration) mf.records.pop_back();
  std::ofstream j(jsonl, std::ios::trunc);
  std::ofstream c(csv, std::ios::trunc);
  c << metrics_csv_header() << "\n";
  for (const auto& r : mf.records) {
    j << metrics_json_line(r, task, alg) << "\n";
    c << metrics_csv_line(r, task, alg) << "\n";
  }
}

}  // namespace

TrainResult train(const ExperimentConfig& cfg_in, const std::string& run_dir) {
  ExperimentConfig cfg = cfg_in;
  cfg.sync_derived();
  cfg.validate();

  const fs::path dir(run_dir);
  const fs::path ckpt_dir = dir / "checkpoints";
  fs::create_directories(ckpt_dir);
  fs::create_directories(dir / "traces");

  const std::string task = env::task_name(cfg.env.task);
  const std::string alg = algorithm_name(cfg.algorithm);

  Checkpoint ck;
  const std::string resume_from = latest_checkpoint(ckpt_dir);
  if (!resume_from.empty()) {
    ck = load_checkpoint(resume_from);
    ExperimentConfig stored = ck.config;
    stored.iterations = cfg.iterations;  // extending a finished run is allowed
    stored.workers = cfg.workers;        // worker count never affects results
    if (!(stored == cfg))
      throw std::runtime_error("train: config does not match the checkpoint in " + run_dir);
    ck.config = cfg;
  } else {
    ck = init_checkpoint(cfg);
  }

  {
    std::ofstream echo(dir / "config.txt", std::ios::trunc);
    echo << serialize_config(cfg);
  }
  trim_metrics(dir / "metrics.jsonl", dir / "metrics.csv", ck.iteration, task, alg);
  std::ofstream jout(dir / "metrics.jsonl", std::ios::app);
  std::ofstream cout_(dir / "metrics.csv", std::ios::app);

  const rollout::ThetaScope scope = cfg.scope();
  std::vector<double>& theta = ck.theta;
  ars::ThetaOptimizer opt{cfg.ars.momentum, ck.velocity};
  pi::ReplayBuffer buf(cfg.pi.capacity);
  if (ck.has_replay && !ck.replay.empty()) buf.restore(std::move(ck.replay), ck.replay_next);
  ck.replay.clear();

  rollout::apply_theta(ck.stack, scope, theta);

  TrainResult result;
  result.run_dir = run_dir;

  auto save_at = [&](const fs::path& path) {
    if (ck.has_replay) {
      ck.replay = buf.snapshot();
      ck.replay_next = buf.ring_next();
    }
    ck.velocity = opt.velocity;
    save_checkpoint(ck, path.string());
    ck.replay.clear();
  };

  const int E = cfg.ars.episodes_per_eval;
  for (int it = ck.iteration + 1; it <= cfg.iterations; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    MetricsRecord rec;
    rec.iteration = it;
    try {
      const ars::PerturbationSet perts = ars::sample_perturbations(
          cfg.ars, mix64(cfg.seed, 0x70657274ULL, static_cast<std::uint64_t>(it)),
          static_cast<int>(theta.size()));

      std::vector<ars::ReturnPair> returns(static_cast<std::size_t>(cfg.ars.num_perturbations));
      std::vector<pi::Episode> episodes;
      std::vector<double> all_returns;
      for (int e = 0; e < E; ++e) {
        const auto wave_iter = static_cast<std::uint64_t>(it) * static_cast<std::uint64_t>(E) +
                               static_cast<std::uint64_t>(e);
        rollout::WaveResult wave = rollout::evaluate_wave(cfg.env, ck.stack, scope, theta, perts,
                                                          ck.norm, wave_iter, cfg.seed,
                                                          cfg.workers);
        for (std::size_t i = 0; i < returns.size(); ++i) {
          returns[i].plus += wave.returns[i].plus / E;
          returns[i].minus += wave.returns[i].minus / E;
          all_returns.push_back(wave.returns[i].plus);
          all_returns.push_back(wave.returns[i].minus);
        }
        for (auto& ep : wave.episodes) episodes.push_back(std::move(ep));
      }

      const std::vector<double> ghat = ars::estimate_gradient(returns, perts, cfg.ars);
      ars::update_theta(theta, ghat, opt);
      rollout::apply_theta(ck.stack, scope, theta);
      rec.grad_norm = l2_norm(ghat);

      // Normalizer statistics come from fresh observations only.
      for (const auto& ep : episodes)
        for (const auto& obs : ep.obs) ck.norm.observe(obs);

      if (cfg.algorithm == Algorithm::pi_ars) {
        for (const auto& ep : episodes) buf.add_episode(ep, cfg.pi.k);
        for (int s = 0; s < cfg.pi.steps_per_iter; ++s) {
          const pi::PiLossReport rep =
              pi::pi_step(buf, ck.stack, ck.adam, ck.norm, cfg.pi,
                          mix64(cfg.seed, 0x7069737465ULL, static_cast<std::uint64_t>(it),
                                static_cast<std::uint64_t>(s)));
          if (rep.applied) {
            rec.infonce = rep.infonce;
            rec.reward_loss = rep.reward_loss;
            ++rec.pi_updates;
          }
        }
      }

      ck.episodes += 2LL * cfg.ars.num_perturbations * E;
      rec.episodes = ck.episodes;
      double sum = 0.0, mx = all_returns[0], mn = all_returns[0];
      for (double r : all_returns) {
        sum += r;
        mx = std::max(mx, r);
        mn = std::min(mn, r);
      }
      rec.mean_return = sum / static_cast<double>(all_returns.size());
      rec.max_return = mx;
      rec.min_return = mn;

      if (!ck.has_best || mx > ck.best_max_return) {
        ck.best_max_return = mx;
        ck.last_improve_iter = it;
        ck.has_best = true;
      }
    } catch (const std::exception& e) {
      save_at(ckpt_dir / "diagnostic.bin");
      throw std::runtime_error("train aborted at iteration " + std::to_string(it) + ": " +
                               e.what());
    }

    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ck.iteration = it;
    jout << metrics_json_line(rec, task, alg) << "\n" << std::flush;
    cout_ << metrics_csv_line(rec, task, alg) << "\n" << std::flush;
    result.appended.push_back(rec);

    const bool plateau = cfg.plateau_iters > 0 && ck.has_best &&
                         it - ck.last_improve_iter >= cfg.plateau_iters;
    if (it % cfg.checkpoint_every == 0 || it == cfg.iterations || plateau)
      save_at(ckpt_dir / checkpoint_name(it));
    if (plateau) {
      result.plateaued = true;
      break;
    }
  }

  if (ck.has_replay) {
    ck.replay = buf.snapshot();
    ck.replay_next = buf.ring_next();
  }
  ck.velocity = opt.velocity;
  result.final = std::move(ck);
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

EvalSummary evaluate(const Checkpoint& ck, const std::string& task, int episodes,
                     std::uint64_t seed, int workers) {
  if (!task.empty() && env::task_from_name(task) != ck.config.env.task)
    throw std::runtime_error("evaluate: task '" + task + "' does not match checkpoint task '" +
                             env::task_name(ck.config.env.task) + "'");
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(episodes));
  for (int i = 0; i < episodes; ++i)
    seeds[static_cast<std::size_t>(i)] = mix64(seed, 0x6576616cULL, static_cast<std::uint64_t>(i));
  EvalSummary s;
  s.outcomes = rollout::evaluate_policy(ck.config.env, ck.stack, ck.norm, seeds, workers);
  s.episodes = episodes;
  double sum = 0.0;
  int succ = 0;
  for (const auto& o : s.outcomes) {
    sum += o.ret;
    succ += o.success ? 1 : 0;
  }
  s.mean_return = sum / episodes;
  s.success_rate = static_cast<double>(succ) / episodes;
  return s;
}

// ---------------------------------------------------------------------------
// Plot
// ---------------------------------------------------------------------------

namespace {

std::string svg_color(const std::string& alg) {
  if (alg == "pi_ars") return "#1f77b4";
  if (alg == "ars") return "#d62728";
  return "#7f7f7f";
}

}  // namespace

PlotResult plot(const std::vector<std::string>& metrics_files) {
  if (metrics_files.empty()) throw std::invalid_argument("plot: need at least one metrics file");
  std::map<std::string, std::vector<MetricsFile>> by_alg;
  PlotResult out;
  for (const auto& path : metrics_files) {
    MetricsFile mf = load_metrics(path);
    if (mf.records.empty()) throw std::runtime_error("plot: empty metrics file: " + path);
    if (out.task.empty()) out.task = mf.task;
    else if (mf.task != out.task)
      throw std::runtime_error("plot: task mismatch: '" + mf.task + "' vs '" + out.task +
                               "' in " + path);
    by_alg[mf.algorithm].push_back(std::move(mf));
  }

  for (const auto& [alg, files] : by_alg) {
    std::size_t len = 0;
    for (const auto& f : files) len = std::max(len, f.records.size());
    std::vector<CurvePoint> curve;
    for (std::size_t j = 0; j < len; ++j) {
      std::vector<double> ys;
      double ep = 0.0;
      for (const auto& f : files)
        if (j < f.records.size()) {
          ys.push_back(f.records[j].mean_return);
          ep += static_cast<double>(f.records[j].episodes);
        }
      CurvePoint p;
      p.n = static_cast<int>(ys.size());
      p.episodes = ep / p.n;
      double sum = 0.0;
      for (double y : ys) sum += y;
      p.mean = sum / p.n;
      if (p.n > 1) {
        double ss = 0.0;
        for (double y : ys) ss += (y - p.mean) * (y - p.mean);
        p.se = std::sqrt(ss / (p.n - 1)) / std::sqrt(static_cast<double>(p.n));
      }
      curve.push_back(p);
    }
    out.curves[alg] = std::move(curve);
  }

  // Table: one row per algorithm, final point.
  std::ostringstream tab;
  tab << "task: " << out.task << "\n";
  tab << "algorithm   trials  episodes      final mean return     +- SE\n";
  for (const auto& [alg, curve] : out.curves) {
    const CurvePoint& p = curve.back();
    char line[160];
    std::snprintf(line, sizeof(line), "%-11s %6d  %12.0f  %20.6f  %8.6f\n", alg.c_str(), p.n,
                  p.episodes, p.mean, p.se);
    tab << line;
  }
  out.table = tab.str();

  // SVG learning curves with shaded SE bands.
  const double W = 640, H = 400, ml = 70, mr = 20, mt = 30, mb = 50;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& [alg, curve] : out.curves)
    for (const auto& p : curve) {
      xmin = std::min(xmin, p.episodes);
      xmax = std::max(xmax, p.episodes);
      ymin = std::min(ymin, p.mean - p.se);
      ymax = std::max(ymax, p.mean + p.se);
    }
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) ymax = ymin + 1;
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;
  auto X = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr); };
  auto Y = [&](double y) { return H - mb - (y - ymin) / (ymax - ymin) * (H - mt - mb); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\""
      << H - mb << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb
      << "\" stroke=\"black\"/>\n";
  svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12
      << "\" text-anchor=\"middle\" font-size=\"14\">episodes</text>\n";
  svg << "<text x=\"18\" y=\"" << (mt + H - mb) / 2
      << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 18 "
      << (mt + H - mb) / 2 << ")\">mean return</text>\n";
  svg << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"20\" text-anchor=\"middle\" "
      << "font-size=\"14\">" << out.task << "</text>\n";
  for (int g = 0; g <= 4; ++g) {
    const double yv = ymin + (ymax - ymin) * g / 4.0;
    svg << "<text x=\"" << ml - 6 << "\" y=\"" << Y(yv) + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << std::round(yv * 100) / 100
        << "</text>\n";
    const double xv = xmin + (xmax - xmin) * g / 4.0;
    svg << "<text x=\"" << X(xv) << "\" y=\"" << H - mb + 18
        << "\" text-anchor=\"middle\" font-size=\"11\">" << std::llround(xv) << "</text>\n";
  }
  int legend_row = 0;
  for (const auto& [alg, curve] : out.curves) {
    const std::string color = svg_color(alg);
    if (curve.size() > 1) {
      std::ostringstream band;
      band << "<polygon fill=\"" << color << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& p : curve) band << X(p.episodes) << "," << Y(p.mean + p.se) << " ";
      for (auto pit = curve.rbegin(); pit != curve.rend(); ++pit)
        band << X(pit->episodes) << "," << Y(pit->mean - pit->se) << " ";
      band << "\"/>\n";
      svg << band.str();
      svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const auto& p : curve) svg << X(p.episodes) << "," << Y(p.mean) << " ";
      svg << "\"/>\n";
    } else {
      svg << "<circle cx=\"" << X(curve[0].episodes) << "\" cy=\"" << Y(curve[0].mean)
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
    const double ly = mt + 16 + 18 * legend_row++;
    svg << "<rect x=\"" << W - mr - 110 << "\" y=\"" << ly - 9
        << "\" width=\"12\" height=\"12\" fill=\"" << color << "\"/>\n";
    svg << "<text x=\"" << W - mr - 92 << "\" y=\"" << ly + 2 << "\" font-size=\"12\">" << alg
        << "</text>\n";
  }
  svg << "</svg>\n";
  out.svg = svg.str();
  return out;
}

// ---------------------------------------------------------------------------
// Trace / replay
// ---------------------------------------------------------------------------

void write_trace(const Checkpoint& ck, std::uint64_t env_seed, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write trace: " + path);

  env::Environment e(ck.config.env);
  const ActionSpec spec = env::default_action_spec();
  Observation obs = e.reset(env_seed);

  ordered_json header;
  header["format"] = "piars-trace-v1";
  header["task"] = env::task_name(ck.config.env.task);
  header["env_seed"] = env_seed;
  header["config"] = serialize_config(ck.config);
  out << header.dump() << "\n";

  double total = 0.0;
  int steps = 0;
  while (true) {
    const Observation normalized = ck.norm.normalize(obs);
    const std::vector<double> z = nets::encode(ck.stack.enc, normalized);
    const std::vector<double> raw = nets::policy_raw(ck.stack.policy, z, normalized.proprio);
    const env::StepResult r = e.step(nets::rescale_action(raw, spec));
    total += r.reward;
    ++steps;
    const env::EnvState& st = e.state();
    ordered_json rec;
    rec["t"] = steps;
    rec["px"] = st.px;
    rec["py"] = st.py;
    rec["pz"] = st.pz;
    rec["yaw"] = st.yaw;
    rec["reward"] = r.reward;
    rec["action"] = raw;
    out << rec.dump() << "\n";
    obs = r.obs;
    if (r.done) {
      ordered_json end;
      end["reason"] = r.reason;
      end["return"] = total;
      end["steps"] = steps;
      out << end.dump() << "\n";
      break;
    }
  }
}

namespace {

// Top-down character map of the terrain with the robot's path overlaid.
std::string render_frame(const env::HeightField& f, const std::vector<std::array<double, 2>>& path,
                         std::size_t upto, double t) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  if (f.has_floor) {
    x0 = f.floor_x0, x1 = f.floor_x1, y0 = f.floor_y0, y1 = f.floor_y1;
  }
  for (const auto& st : f.stones) {
    x0 = std::min(x0, st.x0);
    x1 = std::max(x1, st.x1);
    y0 = std::min(y0, st.y0);
    y1 = std::max(y1, st.y1);
  }
  const int W = 64, H = 16;
  std::vector<std::string> rows(H, std::string(W, ' '));
  for (int r = 0; r < H; ++r)
    for (int c = 0; c < W; ++c) {
      const double wx = x0 + (c + 0.5) / W * (x1 - x0);
      const double wy = y0 + (r + 0.5) / H * (y1 - y0);
      if (f.task == env::Task::navigation) {
        if (f.blocked_at(wx, wy)) rows[r][c] = 'X';
        else if (f.has_floor) rows[r][c] = '.';
      } else {
        rows[r][c] = f.surface_height(wx, wy, t) ? '#' : ' ';
      }
    }
  auto mark = [&](double wx, double wy, char ch) {
    const int c = static_cast<int>((wx - x0) / (x1 - x0) * W);
    const int r = static_cast<int>((wy - y0) / (y1 - y0) * H);
    if (r >= 0 && r < H && c >= 0 && c < W) rows[r][c] = ch;
  };
  if (f.task == env::Task::navigation) mark(f.goal_x, f.goal_y, 'G');
  for (std::size_t i = 0; i < upto && i < path.size(); ++i) mark(path[i][0], path[i][1], '*');
  if (upto > 0 && upto <= path.size()) mark(path[upto - 1][0], path[upto - 1][1], '@');
  std::string out;
  for (const auto& row : rows) out += row + "\n";
  return out;
}

}  // namespace

ReplayResult replay(const std::string& trace_path) {
  std::ifstream in(trace_path);
  if (!in) throw std::runtime_error("cannot open trace: " + trace_path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!trim(line).empty()) lines.push_back(line);
  if (lines.empty()) throw std::runtime_error("replay: empty trace: " + trace_path);

  auto fail = [&](int lineno, const std::string& msg) -> std::runtime_error {
    return std::runtime_error("replay: " + trace_path + ":" + std::to_string(lineno) + ": " + msg);
  };

  json header;
  try {
    header = json::parse(lines[0]);
    if (header.at("format").get<std::string>() != "piars-trace-v1")
      throw std::runtime_error("unknown trace format");
  } catch (const std::exception& e) {
    throw fail(1, e.what());
  }
  ExperimentConfig cfg;
  std::uint64_t env_seed = 0;
  try {
    cfg = parse_config(header.at("config").get<std::string>());
    env_seed = header.at("env_seed").get<std::uint64_t>();
  } catch (const std::exception& e) {
    throw fail(1, e.what());
  }

  struct StepRec {
    double px, py, pz, reward;
    std::vector<double> action;
  };
  std::vector<StepRec> steps;
  std::string end_reason;
  double logged_return = 0.0;
  bool has_end = false;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    json j;
    try {
      j = json::parse(lines[i]);
      if (j.contains("reason")) {
        end_reason = j.at("reason").get<std::string>();
        logged_return = j.at("return").get<double>();
        has_end = true;
        break;
      }
      StepRec s;
      s.px = j.at("px").get<double>();
      s.py = j.at("py").get<double>();
      s.pz = j.at("pz").get<double>();
      s.reward = j.at("reward").get<double>();
      s.action = j.at("action").get<std::vector<double>>();
      steps.push_back(std::move(s));
    } catch (const std::exception& e) {
      throw fail(static_cast<int>(i + 1), e.what());
    }
  }
  if (steps.empty()) throw fail(2, "trace has no step records");
  if (!has_end) throw fail(static_cast<int>(lines.size()), "trace has no terminal record");

  // Re-simulate with the logged actions; the env is deterministic, so every
  // logged position must come back exactly.
  env::Environment e(cfg.env);
  const ActionSpec spec = env::default_action_spec();
  e.reset(env_seed);
  ReplayResult res;
  res.matches_log = true;
  std::vector<std::array<double, 2>> path;
  for (const auto& s : steps) {
    const env::StepResult r = e.step(nets::rescale_action(s.action, spec));
    const env::EnvState& st = e.state();
    if (st.px != s.px || st.py != s.py || st.pz != s.pz || r.reward != s.reward)
      res.matches_log = false;
    path.push_back({st.px, st.py});
  }
  res.steps = static_cast<int>(steps.size());
  res.final_x = steps.back().px;
  res.final_y = steps.back().py;
  res.logged_return = logged_return;

  std::ostringstream frames;
  const int n_frames = 5;
  for (int fidx = 1; fidx <= n_frames; ++fidx) {
    const std::size_t upto =
        static_cast<std::size_t>(std::llround(static_cast<double>(fidx) / n_frames *
                                              static_cast<double>(path.size())));
    const double t = (upto == 0 ? 0.0 : static_cast<double>(upto)) * cfg.env.dt;
    frames << "--- step " << upto << "/" << path.size() << " ---\n";
    frames << render_frame(e.field(), path, upto, t);
  }
  frames << "termination: " << end_reason << "  return: " << logged_return << "\n";
  res.rendering = frames.str();
  return res;
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

std::vector<SweepTrial> sweep(const ExperimentConfig& base, int trials,
                              const std::string& out_dir) {
  if (trials < 1) throw std::invalid_argument("sweep: trials must be >= 1");
  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "sweep.jsonl", std::ios::trunc);
  std::vector<SweepTrial> out;
  for (int t = 0; t < trials; ++t) {
    Rng rng(mix64(base.seed, 0x7377656570ULL, static_cast<std::uint64_t>(t)));
    SweepTrial trial;
    trial.index = t;
    trial.sigma = rng.uniform(0.005, 0.05);
    trial.delta = rng.uniform(0.005, 0.05);

    ExperimentConfig cfg = base;
    cfg.ars.perturb_scale = trial.sigma;
    cfg.ars.update_coef = trial.delta;
    cfg.seed = mix64(base.seed, 0x747269616cULL, static_cast<std::uint64_t>(t));

    char name[32];
    std::snprintf(name, sizeof(name), "trial_%03d", t);
    trial.run_dir = (fs::path(out_dir) / name).string();
    const TrainResult res = train(cfg, trial.run_dir);
    trial.final_mean_return = res.appended.empty() ? 0.0 : res.appended.back().mean_return;

    ordered_json j;
    j["trial"] = trial.index;
    j["sigma"] = trial.sigma;
    j["delta"] = trial.delta;
    j["final_mean_return"] = trial.final_mean_return;
    j["run_dir"] = trial.run_dir;
    summary << j.dump() << "\n" << std::flush;
    out.push_back(std::move(trial));
  }
  return out;
}

}  // namespace piars::exp
