#include "servo/env.hpp"

#include <Eigen/LU>
#include <algorithm>
#include <cmath>
#include <ostream>

#include "json.hpp"
#include "servo/config.hpp"
#include "servo/dvs.hpp"

namespace servo::env {

ActionBounds ActionBounds::symmetric(double linear, double angular) {
  ActionBounds b;
  b.max << linear, linear, linear, angular, angular, angular;
  b.min = -b.max;
  return b;
}

bool ActionBounds::valid() const { return (min.array() < max.array()).all(); }

kin::Twist ActionBounds::to_twist(std::span<const double> action) const {
  if (action.size() != 6) throw DimensionError("action must have 6 components");
  kin::Vector6 v;
  for (int i = 0; i < 6; ++i) {
    const double a = std::clamp(action[std::size_t(i)], -1.0, 1.0);
    v[i] = 0.5 * (max[i] + min[i]) + a * 0.5 * (max[i] - min[i]);
  }
  return kin::Twist::from_vector(v);
}

std::array<double, 6> ActionBounds::to_action(const kin::Twist& twist) const {
  const kin::Vector6 v = twist.vector();
  std::array<double, 6> a{};
  double peak = 0.0;
  for (int i = 0; i < 6; ++i) {
    a[std::size_t(i)] = (v[i] - 0.5 * (max[i] + min[i])) / (0.5 * (max[i] - min[i]));
    peak = std::max(peak, std::abs(a[std::size_t(i)]));
  }
  if (peak > 1.0)
    for (double& x : a) x /= peak;
  return a;
}

std::vector<double> Observation::flatten() const {
  std::vector<double> out;
  out.reserve(flat_size(s_t.size()));
  out.insert(out.end(), s_t.begin(), s_t.end());
  out.insert(out.end(), s_des.begin(), s_des.end());
  out.push_back(fc);
  out.insert(out.end(), q.data(), q.data() + 6);
  out.insert(out.end(), qdot.data(), qdot.data() + 6);
  out.insert(out.end(), ee_position.data(), ee_position.data() + 3);
  out.push_back(ee_orientation.w());
  out.push_back(ee_orientation.x());
  out.push_back(ee_orientation.y());
  out.push_back(ee_orientation.z());
  return out;
}

EnvConfig EnvConfig::from_config(const RunConfig& cfg, int setting) {
  if (setting < 1 || setting > 3) throw ConfigError("setting must be 1, 2 or 3");
  EnvConfig c;
  c.setting = setting;
  c.weights = RewardWeights::from_config(cfg);
  c.bounds = ActionBounds::symmetric(cfg.get_double("env.action_linear_max"),
                                     cfg.get_double("env.action_angular_max"));
  if (!c.bounds.valid()) throw ConfigError("env action bounds must be positive");
  c.fc = cfg.get_double("env.fc");
  if (!(c.fc > 0)) throw ConfigError("env.fc must be positive");
  c.home_height = cfg.get_double("env.home_height");
  const auto gr = cfg.get_doubles("env.goal_radius");
  const auto sr = cfg.get_doubles("env.start_radius");
  const auto orng = cfg.get_doubles("env.object_range");
  if (gr.size() != 2 || sr.size() != 2 || orng.size() != 3)
    throw ConfigError("env.goal_radius/start_radius need 2 values, env.object_range needs 3");
  c.goal_cap = {gr[0], gr[1], cfg.get_double("env.goal_polar_max")};
  c.start_cap = {sr[0], sr[1], cfg.get_double("env.start_polar_max")};
  c.object_range = {orng[0], orng[1], orng[2]};
  c.reset_tries = int(cfg.get_int("env.reset_tries"));
  c.collision_radii = cfg.get_doubles("collision.radii");
  if (c.collision_radii.size() != 7) throw ConfigError("collision.radii needs 7 values");
  c.near_goal_trans = cfg.get_double("env.near_goal_trans");
  c.near_goal_rot = cfg.get_double("env.near_goal_rot");
  c.demo_angle = cfg.get_double("demo.angle");
  c.dvs_gain = cfg.get_double("dvs.gain");
  c.dvs_damping = cfg.get_double("dvs.damping");
  return c;
}

double distance_to_cup(const scene::Cup& cup, double table_height, const Eigen::Vector3d& p) {
  const double rho = (p.head<2>() - cup.xy).norm();
  const double dr = std::max(0.0, rho - cup.radius);
  const double dz = std::max({0.0, table_height - p.z(), p.z() - (table_height + cup.height)});
  return std::hypot(dr, dz);
}

bool check_collision(const kin::DhChain& chain, const kin::Vector6& q, const scene::Scene& scene,
                     std::span<const double> radii) {
  if (radii.size() != 7) throw DimensionError("collision needs 7 sphere radii");
  const auto frames = kin::joint_frames(chain, q);
  for (std::size_t i = 0; i < 7; ++i) {
    const Eigen::Vector3d c =
        i < 6 ? frames[i + 1].translation : (frames[6] * chain.hand_eye).translation;
    const double r = radii[i];
    if (scene.table.contains(c.head<2>()) && c.z() - scene.table.height < r) return true;
    if (distance_to_cup(scene.cup, scene.table.height, c) < r) return true;
  }
  return false;
}

namespace {

const kin::Vector6 kHomeSeeds[] = {
    (kin::Vector6() << 0.0, -1.57, 1.57, -1.57, -1.57, 0.0).finished(),
    (kin::Vector6() << 0.0, -1.2, 1.8, -2.2, -1.57, 0.0).finished(),
    (kin::Vector6() << 0.0, -2.0, 1.2, -0.8, -1.57, 0.0).finished(),
};

Eigen::Vector3d random_unit(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(n(rng), n(rng), n(rng));
  } while (v.norm() < 1e-9);
  return v.normalized();
}

}  // namespace

ServoEnv::ServoEnv(kin::DhChain chain, scene::Scene scene, scene::CameraModel cam, EnvConfig cfg,
                   std::shared_ptr<const ae::AeModel> ae)
    : chain_(std::move(chain)),
      nominal_(std::move(scene)),
      scene_(nominal_),
      cam_(cam),
      cfg_(std::move(cfg)),
      ae_(std::move(ae)) {
  if (!nominal_.valid()) throw ConfigError("invalid scene");
  if (!cam_.valid()) throw ConfigError("invalid camera model");
  if (!cfg_.weights.valid()) throw ConfigError("invalid reward weights");
  if (!cfg_.bounds.valid()) throw ConfigError("invalid action bounds");
  if (cfg_.setting < 1 || cfg_.setting > 3) throw ConfigError("setting must be 1, 2 or 3");
  if (cfg_.collision_radii.size() != 7) throw ConfigError("collision radii need 7 values");
  if (ae_ && (ae_->width() != cam_.width || ae_->height() != cam_.height))
    throw DimensionError("autoencoder image size does not match the camera");

  const Eigen::Vector3d center = nominal_.cup_center();
  const kin::Pose home_pose = scene::look_at(center + Eigen::Vector3d(0, 0, cfg_.home_height), center, 0.0);
  std::optional<kin::Vector6> q;
  for (const auto& seed : kHomeSeeds)
    if ((q = solve_ik(home_pose, nominal_, seed))) break;
  if (!q) throw ConfigError("no admissible home configuration above the cup");
  home_q_ = *q;
  set_configuration(home_q_, kin::Vector6::Zero());
  goal_ = achieved_;
}

ServoEnv ServoEnv::from_config(const RunConfig& cfg, int setting, std::shared_ptr<const ae::AeModel> ae) {
  return ServoEnv(kin::DhChain::from_config(cfg), scene::Scene::from_config(cfg),
                  scene::CameraModel::from_config(cfg), EnvConfig::from_config(cfg, setting), std::move(ae));
}

bool ServoEnv::admissible(const kin::Vector6& q, const scene::Scene& scene) const {
  kin::JointState js;
  js.q = q;
  if (js.violates_limits(chain_)) return false;
  const kin::Matrix6 J = kin::geometric_jacobian(chain_, q, kin::JacobianFrame::end_effector);
  if (std::abs(J.determinant()) <= cfg_.weights.phi_jacobian) return false;
  if (check_collision(chain_, q, scene, cfg_.collision_radii)) return false;
  return scene::object_in_fov(scene, kin::forward_kinematics(chain_, q).camera, cam_);
}

std::optional<kin::Vector6> ServoEnv::solve_ik(const kin::Pose& target, const scene::Scene& scene,
                                               const kin::Vector6& seed) const {
  auto q = kin::inverse_kinematics(chain_, target, seed);
  if (!q || !admissible(*q, scene)) return std::nullopt;
  return q;
}

std::shared_ptr<GoalState> ServoEnv::make_goal_state(const kin::Vector6& q, const scene::Scene& scene,
                                                     scene::DepthImage* image_out) const {
  auto g = std::make_shared<GoalState>();
  g->pose = kin::forward_kinematics(chain_, q).camera;
  scene::DepthImage img = scene::render_depth(scene, g->pose, cam_);
  g->image = img.normalized_f32(cam_);
  if (ae_) g->code = ae_->encode(img);
  g->scene = scene;
  if (image_out) *image_out = std::move(img);
  return g;
}

void ServoEnv::set_configuration(const kin::Vector6& q, const kin::Vector6& qdot) {
  joints_.q = q;
  joints_.qdot = qdot;
  const kin::ArmPose arm = kin::forward_kinematics(chain_, q);
  ee_pose_ = arm.end_effector;
  camera_pose_ = arm.camera;
  achieved_ = make_goal_state(q, scene_, &image_);
}

Observation ServoEnv::observation() const {
  Observation o;
  o.s_t = achieved_->code;
  o.s_des = goal_->code;
  o.fc = cfg_.fc;
  o.q = joints_.q;
  o.qdot = joints_.qdot;
  o.ee_position = ee_pose_.translation;
  o.ee_orientation = ee_pose_.quaternion();
  return o;
}

std::vector<double> ServoEnv::sim_state() const {
  std::vector<double> s(joints_.q.data(), joints_.q.data() + 6);
  s.insert(s.end(), joints_.qdot.data(), joints_.qdot.data() + 6);
  s.push_back(double(steps_));
  return s;
}

ServoEnv::Reset ServoEnv::reset_episode(Rng& rng, StartMode mode) {
  return reset_impl(rng, mode, cfg_.near_goal_trans, cfg_.near_goal_rot);
}

ServoEnv::Reset ServoEnv::reset_impl(Rng& rng, StartMode mode, double near_trans, double near_rot) {
  scene_ = scene::perturb_object(nominal_, rng, cfg_.object_range_for_setting());
  const Eigen::Vector3d center = scene_.cup_center();

  std::optional<kin::Vector6> q_goal;
  for (int t = 0; t < cfg_.reset_tries && !q_goal; ++t)
    q_goal = solve_ik(scene::sample_camera_pose_on_cap(rng, cfg_.goal_cap, center), scene_, home_q_);
  if (!q_goal)
    throw Error("no admissible goal pose found in " + std::to_string(cfg_.reset_tries) + " tries");
  goal_ = make_goal_state(*q_goal, scene_);

  // The start draws from its own stream so every start mode sees the same goal.
  Rng start_rng(rng());
  if (mode == StartMode::setting) mode = cfg_.setting == 3 ? StartMode::hemisphere : StartMode::home;

  std::optional<kin::Vector6> q_start;
  switch (mode) {
    case StartMode::home:
      if (admissible(home_q_, scene_)) q_start = home_q_;
      break;
    case StartMode::hemisphere:
      for (int t = 0; t < cfg_.reset_tries && !q_start; ++t) {
        const kin::Pose p = scene::sample_camera_pose_on_cap(start_rng, cfg_.start_cap, center);
        // an episode must not start already past the divergence bounds
        const kin::PoseError e = kin::pose_errors(p, goal_->pose);
        if (e.translation >= cfg_.weights.div_trans || e.rotation >= cfg_.weights.div_rot) continue;
        q_start = solve_ik(p, scene_, home_q_);
      }
      break;
    case StartMode::near_goal:
      for (int t = 0; t < cfg_.reset_tries && !q_start; ++t) {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        kin::Vector6 offset;
        // uniform within the translation ball and the rotation-vector ball
        offset.head<3>() = random_unit(start_rng) * (near_trans * std::cbrt(u(start_rng)));
        offset.tail<3>() = random_unit(start_rng) * (near_rot * std::cbrt(u(start_rng)));
        if (near_trans == 0.0 && near_rot == 0.0) {
          q_start = *q_goal;
          break;
        }
        q_start = solve_ik(kin::integrate_twist(goal_->pose, offset, 1.0), scene_, *q_goal);
      }
      break;
    case StartMode::setting:
      break;
  }
  if (!q_start) throw Error("no admissible start configuration found");

  steps_ = 0;
  done_ = false;
  outcome_ = Outcome::running;
  set_configuration(*q_start, kin::Vector6::Zero());
  errors_ = measure(*achieved_, *goal_);
  return {observation(), goal_};
}

std::vector<double> ServoEnv::reset(Rng& rng) { return reset_episode(rng, start_mode_).observation.flatten(); }

std::vector<double> ServoEnv::reset_near_goal(Rng& rng, double radius) {
  return reset_impl(rng, StartMode::near_goal, radius, radius > 0.0 ? cfg_.demo_angle : 0.0)
      .observation.flatten();
}

StepResult ServoEnv::step(std::span<const double> action) {
  if (action.size() != 6) throw DimensionError("action must have 6 components");
  std::array<double, 6> a{};
  for (std::size_t i = 0; i < 6; ++i) a[i] = std::clamp(action[i], -1.0, 1.0);
  return advance(cfg_.bounds.to_twist(a), a);
}

StepResult ServoEnv::step_twist(const kin::Twist& twist) {
  const auto a = cfg_.bounds.to_action(twist);
  return advance(cfg_.bounds.to_twist(a), a);
}

StepResult ServoEnv::advance(const kin::Twist& twist, std::span<const double> action) {
  if (done_) throw Error("step called on a finished episode; call reset first");
  const auto before = achieved_;
  std::vector<double> obs_before = observation().flatten();
  std::vector<double> sim_before = sim_state();
  const RewardWeights& w = cfg_.weights;

  Outcome physical = Outcome::running;
  kin::Vector6 qdot = kin::Vector6::Zero();
  try {
    qdot = kin::resolve_joint_velocities(chain_, joints_.q, twist, w.phi_jacobian);
  } catch (const SingularityError&) {
    physical = Outcome::singularity;
  }
  const kin::Vector6 q = joints_.q + qdot / cfg_.fc;
  if (physical == Outcome::running) {
    kin::JointState js;
    js.q = q;
    if (js.violates_limits(chain_)) {
      physical = Outcome::joint_limit;
    } else if (std::abs(kin::geometric_jacobian(chain_, q, kin::JacobianFrame::end_effector).determinant()) <=
               w.phi_jacobian) {
      physical = Outcome::singularity;
    } else if (check_collision(chain_, q, scene_, cfg_.collision_radii)) {
      physical = Outcome::collision;
    }
  }
  set_configuration(q, qdot);
  if (physical == Outcome::running && !scene::object_in_fov(scene_, camera_pose_, cam_))
    physical = Outcome::out_of_fov;

  ++steps_;
  const bool last = steps_ >= w.max_steps;
  const StepEvaluation ev = evaluate_step(*before, *achieved_, *goal_, action, physical, last, w);
  errors_ = ev.errors;
  outcome_ = ev.outcome;
  done_ = ev.done;

  StepResult r;
  r.observation = observation().flatten();
  r.reward = ev.reward;
  r.done = ev.done;
  r.outcome = ev.outcome;
  r.errors = ev.errors;
  r.last_step = last;
  Transition& t = r.transition;
  t.obs = std::move(obs_before);
  t.action.assign(action.begin(), action.end());
  t.reward = ev.reward;
  t.next_obs = r.observation;
  t.done = ev.done;
  t.outcome = ev.outcome;
  t.last_step = last;
  t.achieved_before = before;
  t.achieved = achieved_;
  t.desired = goal_;
  t.sim_state = std::move(sim_before);
  t.step = steps_ - 1;
  return r;
}

std::vector<double> ServoEnv::demonstration_action() {
  dvs::DvsConfig d;
  d.gain = cfg_.dvs_gain;
  d.damping = cfg_.dvs_damping;
  const auto a = cfg_.bounds.to_action(dvs::dvs_step(image_, goal_->image, cam_, d));
  return {a.begin(), a.end()};
}

void ServoEnv::substitute_goal(std::vector<double>& obs, const GoalState& goal) const {
  const std::size_t L = latent_dim();
  if (obs.size() != observation_size()) throw DimensionError("observation has the wrong length");
  if (goal.code.size() != L) throw DimensionError("goal code has the wrong length");
  std::copy(goal.code.begin(), goal.code.end(), obs.begin() + std::ptrdiff_t(L));
}

std::vector<double> ServoEnv::restore(std::shared_ptr<const GoalState> goal, std::span<const double> sim) {
  if (sim.size() != 13) throw DimensionError("servo sim state has 13 entries");
  if (!goal) throw Error("restore needs a goal");
  goal_ = std::move(goal);
  scene_ = goal_->scene;
  kin::Vector6 q, qdot;
  for (int i = 0; i < 6; ++i) {
    q[i] = sim[std::size_t(i)];
    qdot[i] = sim[std::size_t(6 + i)];
  }
  steps_ = int(sim[12]);
  set_configuration(q, qdot);
  errors_ = measure(*achieved_, *goal_);
  outcome_ = Outcome::running;
  done_ = false;
  return observation().flatten();
}

void ServoEnv::write_log_line(std::ostream& out, const StepResult& r) const {
  nlohmann::json j = {{"step", r.transition.step},
                      {"q", std::vector<double>(joints_.q.data(), joints_.q.data() + 6)},
                      {"qdot", std::vector<double>(joints_.qdot.data(), joints_.qdot.data() + 6)},
                      {"action", r.transition.action},
                      {"reward", r.reward},
                      {"e_trans", r.errors.trans},
                      {"e_rot", r.errors.rot},
                      {"e_img", r.errors.img},
                      {"outcome", to_string(r.outcome)},
                      {"done", r.done}};
  out << j.dump() << '\n';
}

}  // namespace servo::env
