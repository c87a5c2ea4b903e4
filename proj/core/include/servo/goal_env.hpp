#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "servo/common.hpp"
#include "servo/kinematics.hpp"
#include "servo/scene.hpp"

namespace servo {
class RunConfig;
}

namespace servo::env {

enum class Outcome {
  running,
  success,
  diverged_trans,
  diverged_rot,
  singularity,
  joint_limit,
  collision,
  out_of_fov,
  max_steps,
};

std::string to_string(Outcome o);
Outcome outcome_from_string(const std::string& s);
inline bool is_failure(Outcome o) { return o != Outcome::running && o != Outcome::success; }
// Failures that belong to the robot state itself, whatever goal is pursued.
bool is_physical_failure(Outcome o);

inline constexpr double kTerminalReward = 100.0;
inline constexpr double kStepError = 1.0;

struct RewardWeights {
  double phi1 = 100.0;  // translation-error decrease
  double phi2 = 10.0;   // rotation-error decrease
  double phi3 = 10.0;   // image-error decrease
  double phi4 = 0.1;    // per-step penalty
  double phi_trans = 0.002;
  double phi_rot = 0.05;
  double div_trans = 1.0;
  double div_rot = 2.5;
  double phi_jacobian = 1e-4;
  int max_steps = 200;
  bool timeout_is_failure = true;

  static RewardWeights from_config(const RunConfig& cfg);
  bool valid() const;
};

struct Errors {
  double trans = 0.0;
  double rot = 0.0;
  double img = 0.0;
};

// Terminal classification. Physical failures win, then success, then the
// divergence bounds, then the step limit.
Outcome classify(const Errors& after, Outcome physical, bool last_step, const RewardWeights& w);

// phi1*dtrans + phi2*drot + phi3*dimg - phi4*e_step + r_terminal, d = before - after.
double compute_reward(const Errors& before, const Errors& after, std::span<const double> action,
                      Outcome outcome, const RewardWeights& w);

// Mean squared difference of normalized depth images.
double image_error(std::span<const float> a, std::span<const float> b);

// Everything needed to score a state against a goal. The full environment
// fills pose/image/code/scene; the point-reach toy fills point/code.
struct GoalState {
  kin::Pose pose;
  std::vector<double> point;
  std::vector<float> image;
  std::vector<double> code;  // goal slice of the observation (latent code or point)
  scene::Scene scene;
};

Errors measure(const GoalState& achieved, const GoalState& goal);

struct StepEvaluation {
  double reward = 0.0;
  Outcome outcome = Outcome::running;
  bool done = false;
  Errors errors;
};

// The single reward/termination path shared by live steps and relabeling.
StepEvaluation evaluate_step(const GoalState& before, const GoalState& after, const GoalState& goal,
                             std::span<const double> action, Outcome physical, bool last_step,
                             const RewardWeights& w);

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;
  Outcome outcome = Outcome::running;
  bool last_step = false;
  std::shared_ptr<const GoalState> achieved_before;
  std::shared_ptr<const GoalState> achieved;
  std::shared_ptr<const GoalState> desired;
  std::vector<double> sim_state;  // restorable simulator state before the step
  int episode = 0;
  int step = 0;
  bool relabeled = false;
};

struct StepResult {
  std::vector<double> observation;
  double reward = 0.0;
  bool done = false;
  Outcome outcome = Outcome::running;
  Errors errors;
  bool last_step = false;
  Transition transition;
};

// Goal-conditioned environment contract shared by the servo environment and
// the diagnostic point-reach environments.
class GoalEnv {
 public:
  virtual ~GoalEnv() = default;

  virtual std::size_t observation_size() const = 0;
  virtual std::size_t action_size() const = 0;

  virtual std::vector<double> reset(Rng& rng) = 0;
  // Episode whose start lies within `radius` of the goal (demonstrations).
  virtual std::vector<double> reset_near_goal(Rng& rng, double radius) = 0;
  virtual StepResult step(std::span<const double> action) = 0;

  // Action of the scripted controller for the current state (DVS for the
  // servo environment), used to generate demonstrations.
  virtual std::vector<double> demonstration_action() = 0;

  virtual void substitute_goal(std::vector<double>& obs, const GoalState& goal) const = 0;
  // Put the simulator back into the state captured in Transition::sim_state
  // with `goal` as the episode goal.
  virtual std::vector<double> restore(std::shared_ptr<const GoalState> goal,
                                      std::span<const double> sim_state) = 0;

  virtual const RewardWeights& weights() const = 0;
  virtual std::shared_ptr<const GoalState> goal() const = 0;
  virtual Errors errors() const = 0;
  virtual bool done() const = 0;
  virtual int steps() const = 0;

  virtual std::unique_ptr<GoalEnv> clone() const = 0;
};

}  // namespace servo::env
