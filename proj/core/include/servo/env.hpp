#pragma once

#include <array>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "servo/autoencoder.hpp"
#include "servo/goal_env.hpp"
#include "servo/kinematics.hpp"
#include "servo/scene.hpp"

namespace servo {
class RunConfig;
}

namespace servo::env {

// Camera twist limits; normalized actions in [-1, 1] map linearly onto [min, max].
struct ActionBounds {
  kin::Vector6 min = -(kin::Vector6() << 0.05, 0.05, 0.05, 0.25, 0.25, 0.25).finished();
  kin::Vector6 max = (kin::Vector6() << 0.05, 0.05, 0.05, 0.25, 0.25, 0.25).finished();

  static ActionBounds symmetric(double linear, double angular);
  bool valid() const;
  kin::Twist to_twist(std::span<const double> action) const;
  // Normalized action for a twist; a twist outside the bounds is scaled
  // uniformly (direction kept) until it fits.
  std::array<double, 6> to_action(const kin::Twist& twist) const;
};

struct Observation {
  std::vector<double> s_t;
  std::vector<double> s_des;
  double fc = 10.0;
  kin::Vector6 q = kin::Vector6::Zero();
  kin::Vector6 qdot = kin::Vector6::Zero();
  Eigen::Vector3d ee_position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond ee_orientation = Eigen::Quaterniond::Identity();

  // [s_t, s_des, fc, q, qdot, position, qw, qx, qy, qz], length 2L + 20.
  std::vector<double> flatten() const;
  static std::size_t flat_size(std::size_t latent_dim) { return 2 * latent_dim + 20; }
};

enum class StartMode {
  setting,    // home for settings 1-2, hemisphere for setting 3
  home,
  hemisphere,
  near_goal,
};

struct EnvConfig {
  int setting = 1;
  RewardWeights weights;
  ActionBounds bounds;
  double fc = 10.0;
  double home_height = 0.4;
  scene::CapRange goal_cap{0.25, 0.40, 0.6};
  scene::CapRange start_cap{0.25, 0.50, 1.1};
  std::array<double, 3> object_range{0.05, 0.10, 0.10};
  int reset_tries = 100;
  std::vector<double> collision_radii{0.07, 0.06, 0.05, 0.045, 0.045, 0.04, 0.03};
  double near_goal_trans = 0.005;  // StartMode::near_goal offsets
  double near_goal_rot = 0.035;
  double demo_angle = 0.035;  // rotation offset of demonstration starts
  // DVS controller used for demonstrations
  double dvs_gain = 1.0;
  double dvs_damping = 1e-6;

  static EnvConfig from_config(const RunConfig& cfg, int setting);
  double object_range_for_setting() const { return object_range.at(std::size_t(setting - 1)); }
};

// Per-link spheres centred on joint frames 1..6 plus one on the camera, tested
// against the table slab and the cup cylinder. Tangency does not collide.
bool check_collision(const kin::DhChain& chain, const kin::Vector6& q, const scene::Scene& scene,
                     std::span<const double> radii);

// Distance from a point to the solid capped cylinder of the cup (0 inside).
double distance_to_cup(const scene::Cup& cup, double table_height, const Eigen::Vector3d& p);

class ServoEnv : public GoalEnv {
 public:
  // `ae` may be null: observations then carry no latent code (DVS-only use).
  ServoEnv(kin::DhChain chain, scene::Scene scene, scene::CameraModel cam, EnvConfig cfg,
           std::shared_ptr<const ae::AeModel> ae);
  static ServoEnv from_config(const RunConfig& cfg, int setting, std::shared_ptr<const ae::AeModel> ae);

  struct Reset {
    Observation observation;
    std::shared_ptr<const GoalState> goal;
  };
  Reset reset_episode(Rng& rng, StartMode mode);

  // GoalEnv
  std::size_t observation_size() const override { return Observation::flat_size(latent_dim()); }
  std::size_t action_size() const override { return 6; }
  std::vector<double> reset(Rng& rng) override;
  std::vector<double> reset_near_goal(Rng& rng, double radius) override;
  StepResult step(std::span<const double> action) override;
  std::vector<double> demonstration_action() override;
  void substitute_goal(std::vector<double>& obs, const GoalState& goal) const override;
  std::vector<double> restore(std::shared_ptr<const GoalState> goal,
                              std::span<const double> sim_state) override;
  const RewardWeights& weights() const override { return cfg_.weights; }
  std::shared_ptr<const GoalState> goal() const override { return goal_; }
  Errors errors() const override { return errors_; }
  bool done() const override { return done_; }
  int steps() const override { return steps_; }
  std::unique_ptr<GoalEnv> clone() const override { return std::make_unique<ServoEnv>(*this); }

  // Drive with a camera twist directly (DVS). The twist is scaled into the
  // action bounds; the reward sees the equivalent normalized action.
  StepResult step_twist(const kin::Twist& twist);

  void set_start_mode(StartMode m) { start_mode_ = m; }
  StartMode start_mode() const { return start_mode_; }

  Observation observation() const;
  std::size_t latent_dim() const { return ae_ ? ae_->latent_dim() : 0; }
  const kin::JointState& joints() const { return joints_; }
  const kin::Pose& camera_pose() const { return camera_pose_; }
  const kin::Pose& end_effector_pose() const { return ee_pose_; }
  const scene::DepthImage& image() const { return image_; }
  std::shared_ptr<const GoalState> achieved() const { return achieved_; }
  Outcome outcome() const { return outcome_; }
  const kin::Vector6& home() const { return home_q_; }
  const kin::DhChain& chain() const { return chain_; }
  const scene::CameraModel& camera() const { return cam_; }
  const scene::Scene& scene() const { return scene_; }
  const scene::Scene& nominal_scene() const { return nominal_; }
  const EnvConfig& config() const { return cfg_; }
  EnvConfig& config() { return cfg_; }
  std::vector<double> sim_state() const;

  // Checks a candidate configuration: limits, singularity, collision, FOV.
  bool admissible(const kin::Vector6& q, const scene::Scene& scene) const;

  // JSON-lines record of one step.
  void write_log_line(std::ostream& out, const StepResult& r) const;

 private:
  std::shared_ptr<GoalState> make_goal_state(const kin::Vector6& q, const scene::Scene& scene,
                                             scene::DepthImage* image_out = nullptr) const;
  void set_configuration(const kin::Vector6& q, const kin::Vector6& qdot);
  std::optional<kin::Vector6> solve_ik(const kin::Pose& target, const scene::Scene& scene,
                                       const kin::Vector6& seed) const;
  Reset reset_impl(Rng& rng, StartMode mode, double near_trans, double near_rot);
  StepResult advance(const kin::Twist& twist, std::span<const double> action);

  kin::DhChain chain_;
  scene::Scene nominal_;
  scene::Scene scene_;
  scene::CameraModel cam_;
  EnvConfig cfg_;
  std::shared_ptr<const ae::AeModel> ae_;
  kin::Vector6 home_q_ = kin::Vector6::Zero();
  StartMode start_mode_ = StartMode::setting;

  kin::JointState joints_;
  kin::Pose ee_pose_;
  kin::Pose camera_pose_;
  scene::DepthImage image_;
  std::shared_ptr<const GoalState> achieved_;
  std::shared_ptr<const GoalState> goal_;
  Errors errors_;
  Outcome outcome_ = Outcome::running;
  int steps_ = 0;
  bool done_ = true;
};

}  // namespace servo::env
