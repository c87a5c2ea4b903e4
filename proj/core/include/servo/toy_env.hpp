#pragma once

#include <memory>
#include <span>
#include <vector>

#include "servo/goal_env.hpp"

namespace servo {
class RunConfig;
}

namespace servo::toy {

struct ToyConfig {
  std::size_t dim = 2;
  double dt = 0.1;
  double a_max = 1.0;
  double success_radius = 0.05;
  double arena = 1.0;  // positions and goals drawn from [-arena, arena]^dim
  int max_steps = 50;
  double phi1 = 1.0;
  double phi4 = 0.1;
  double div_trans = 3.0;
  bool timeout_is_failure = true;
  double demo_radius = 0.5;

  static ToyConfig from_config(const RunConfig& cfg);
  env::RewardWeights weights() const;
};

// Point mass moving with bounded velocity toward a goal point. The goal slice
// of the observation is the goal coordinates themselves.
class PointReachEnv : public env::GoalEnv {
 public:
  explicit PointReachEnv(ToyConfig cfg);

  std::size_t observation_size() const override { return 2 * cfg_.dim; }
  std::size_t action_size() const override { return cfg_.dim; }
  std::vector<double> reset(Rng& rng) override;
  std::vector<double> reset_near_goal(Rng& rng, double radius) override;
  env::StepResult step(std::span<const double> action) override;
  // Proportional controller: the largest box-feasible step straight at the goal.
  std::vector<double> demonstration_action() override;
  void substitute_goal(std::vector<double>& obs, const env::GoalState& goal) const override;
  std::vector<double> restore(std::shared_ptr<const env::GoalState> goal,
                              std::span<const double> sim_state) override;
  const env::RewardWeights& weights() const override { return weights_; }
  std::shared_ptr<const env::GoalState> goal() const override { return goal_; }
  env::Errors errors() const override { return errors_; }
  bool done() const override { return done_; }
  int steps() const override { return steps_; }
  std::unique_ptr<env::GoalEnv> clone() const override { return std::make_unique<PointReachEnv>(*this); }

  // Place the episode explicitly (tests).
  std::vector<double> reset_to(std::vector<double> start, std::vector<double> goal);

  const std::vector<double>& position() const { return pos_; }
  const ToyConfig& config() const { return cfg_; }
  std::vector<double> observation() const;

 private:
  std::shared_ptr<env::GoalState> state_at(const std::vector<double>& p) const;

  ToyConfig cfg_;
  env::RewardWeights weights_;
  std::vector<double> pos_;
  std::shared_ptr<const env::GoalState> achieved_;
  std::shared_ptr<const env::GoalState> goal_;
  env::Errors errors_;
  int steps_ = 0;
  bool done_ = true;
};

}  // namespace servo::toy
