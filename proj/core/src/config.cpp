#include "servo/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "servo/common.hpp"

namespace servo {

SingularityError::SingularityError(double det, double threshold)
    : Error("jacobian determinant " + std::to_string(det) + " at or below threshold " +
            std::to_string(threshold)),
      det_(det) {}

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag, std::uint64_t index) {
  // FNV-1a over the tag, then two splitmix64 rounds to decorrelate nearby inputs.
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : tag) {
    h ^= c;
    h *= 1099511628211ull;
  }
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(master ^ h) ^ mix(index + 0x632be59bd9b4e019ull));
}

unsigned worker_threads() {
  unsigned n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SERVO_RL_THREADS")) {
    char* end = nullptr;
    long cap = std::strtol(env, &end, 10);
    if (end != env && cap >= 1) n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return n;
}

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

double parse_double(const std::string& key, const std::string& text) {
  try {
    std::size_t pos = 0;
    double v = std::stod(text, &pos);
    if (trim(text.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected a number, got '" + text + "'");
}

}  // namespace

const std::map<std::string, std::string>& RunConfig::defaults() {
  static const std::map<std::string, std::string> table = {
      {"seed", "0"},
      {"log.wall_clock", "true"},

      // kinematics: UR5e standard DH
      {"dh.a", "0,-0.425,-0.3922,0,0,0"},
      {"dh.d", "0.1625,0,0,0.1333,0.0997,0.0996"},
      {"dh.alpha", "1.5707963267948966,0,0,1.5707963267948966,-1.5707963267948966,0"},
      {"dh.theta_offset", "0,0,0,0,0,0"},
      {"joint.min", "-6.283185307179586,-6.283185307179586,-6.283185307179586,"
                    "-6.283185307179586,-6.283185307179586,-6.283185307179586"},
      {"joint.max", "6.283185307179586,6.283185307179586,6.283185307179586,"
                    "6.283185307179586,6.283185307179586,6.283185307179586"},
      {"joint.vel_limit", "3.141592653589793,3.141592653589793,3.141592653589793,"
                          "3.141592653589793,3.141592653589793,3.141592653589793"},
      {"handeye.xyz", "0,0.05,0.03"},
      {"handeye.rpy", "0,0,0"},
      {"kin.phi_jacobian", "1e-4"},
      {"collision.radii", "0.07,0.06,0.05,0.045,0.045,0.04,0.03"},

      // scene and camera
      {"camera.width", "32"},
      {"camera.height", "32"},
      {"camera.vfov_deg", "45"},
      {"camera.near", "0.05"},
      {"camera.far", "1.5"},
      {"camera.supersample", "3"},
      {"scene.table_height", "0"},
      {"scene.table_center", "0.5,0"},
      {"scene.table_half_extent", "0.4,0.5"},
      {"scene.cup_xy", "0.45,0"},
      {"scene.cup_radius", "0.04"},
      {"scene.cup_height", "0.10"},
      {"scene.cup_handle", "0.035,0.02,0.06"},

      // autoencoder dataset
      {"data.radius", "0.05,0.85"},
      {"data.polar_max", "1.5707963267948966"},
      {"data.object_range", "0.10"},

      // autoencoder
      {"ae.latent_dim", "16"},
      {"ae.hidden", "256,64"},
      {"ae.epochs", "200"},
      {"ae.batch", "32"},
      {"ae.lr", "1e-3"},
      {"ae.patience", "20"},
      {"ae.min_delta", "1e-5"},
      {"ae.val_fraction", "0.1"},

      // environment
      {"env.fc", "10"},
      {"env.max_steps", "200"},
      {"env.phi1", "100"},
      {"env.phi2", "10"},
      {"env.phi3", "10"},
      {"env.phi4", "0.1"},
      {"env.phi_trans", "0.002"},
      {"env.phi_rot", "0.05"},
      {"env.div_trans", "1.0"},
      {"env.div_rot", "2.5"},
      {"env.action_linear_max", "0.05"},
      {"env.action_angular_max", "0.25"},
      {"env.home_height", "0.4"},
      {"env.near_goal_trans", "0.005"},
      {"env.near_goal_rot", "0.035"},
      {"env.goal_radius", "0.25,0.40"},
      {"env.goal_polar_max", "0.6"},
      {"env.start_radius", "0.25,0.50"},
      {"env.start_polar_max", "1.1"},
      {"env.object_range", "0.05,0.10,0.10"},
      {"env.reset_tries", "100"},

      // DVS baseline and demonstrations
      {"dvs.gain", "1.0"},
      {"dvs.max_iterations", "200"},
      {"dvs.converge_trans", "0.002"},
      {"dvs.damping", "1e-6"},
      {"demo.prob", "0.1"},
      {"demo.radius", "0.03"},
      {"demo.angle", "0.035"},

      // TD3 / HER
      {"td3.gamma", "0.99"},
      {"td3.tau", "0.005"},
      {"td3.policy_delay", "2"},
      {"td3.explore_sigma", "0.1"},
      {"td3.target_sigma", "0.2"},
      {"td3.target_clip", "0.5"},
      {"td3.batch", "256"},
      {"td3.actor_hidden", "256,256"},
      {"td3.critic_hidden", "256,256"},
      {"td3.actor_lr", "3e-4"},
      {"td3.critic_lr", "3e-4"},
      {"td3.action_l2", "0.1"},
      {"td3.buffer_capacity", "1000000"},
      {"td3.warmup", "1000"},
      {"td3.explore_steps", "5000"},
      {"td3.her_k", "4"},
      {"train.episodes", "2000"},
      {"train.max_env_steps", "0"},
      {"train.checkpoint_every", "100"},

      // evaluation
      {"eval.trials", "100"},

      // toy point-reach
      {"toy.dim", "2"},
      {"toy.dt", "0.1"},
      {"toy.a_max", "1.0"},
      {"toy.success_radius", "0.05"},
      {"toy.arena", "1.0"},
      {"toy.max_steps", "50"},
      {"toy.phi1", "1.0"},
      {"toy.phi4", "0.1"},
      {"toy.div_trans", "3.0"},
      {"toy.timeout_is_failure", "true"},
      {"toy.demo_radius", "0.5"},
  };
  return table;
}

RunConfig::RunConfig() : values_(defaults()) {}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  RunConfig cfg;
  cfg.merge_file(path);
  return cfg;
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key = value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::apply_override(const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) != 0; }

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::get_double(const std::string& key) const { return parse_double(key, raw(key)); }

std::int64_t RunConfig::get_int(const std::string& key) const {
  double v = get_double(key);
  if (v != static_cast<double>(static_cast<std::int64_t>(v)))
    throw ConfigError("config key '" + key + "': expected an integer");
  return static_cast<std::int64_t>(v);
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  const std::string& text = raw(key);
  try {
    std::size_t pos = 0;
    auto v = std::stoull(text, &pos);
    if (trim(text.substr(pos)).empty() && text.find('-') == std::string::npos) return v;
  } catch (const std::exception&) {
  }
  throw ConfigError("config key '" + key + "': expected an unsigned integer, got '" + text + "'");
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string& v = raw(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& item : split_list(raw(key))) out.push_back(parse_double(key, item));
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (double v : get_doubles(key)) {
    if (v < 0 || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw ConfigError("config key '" + key + "': expected non-negative integers");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const auto& [k, v] : values_) out << k << " = " << v << '\n';
  return out.str();
}

void RunConfig::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << dump();
}

}  // namespace servo
