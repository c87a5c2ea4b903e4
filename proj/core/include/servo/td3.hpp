#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "servo/goal_env.hpp"
#include "servo/nn.hpp"

namespace servo {
class RunConfig;
}

namespace servo::rl {

struct Td3Config {
  double gamma = 0.99;
  double tau = 0.005;
  int policy_delay = 2;
  double explore_sigma = 0.1;
  double target_sigma = 0.2;
  double target_clip = 0.5;
  std::size_t batch = 256;
  std::vector<std::size_t> actor_hidden{256, 256};
  std::vector<std::size_t> critic_hidden{256, 256};
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  // Actor loss adds action_l2 * mean ||a||^2; keeps the tanh output out of
  // saturation where the critic gradient vanishes.
  double action_l2 = 0.1;

  static Td3Config from_config(const RunConfig& cfg);
  bool valid() const;
};

struct Batch {
  nn::Tensor2 obs;
  nn::Tensor2 action;
  nn::Tensor2 reward;  // n x 1
  nn::Tensor2 next_obs;
  nn::Tensor2 done;  // n x 1, 1.0 for terminal transitions
  std::size_t size() const { return obs.rows(); }
};

Batch make_batch(std::span<const env::Transition* const> items);

// Ring buffer with FIFO eviction. Index 0 is the oldest stored transition.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);

  void push(env::Transition t);
  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  const env::Transition& at(std::size_t i) const;
  std::uint64_t total_pushed() const { return pushed_; }

  std::vector<std::size_t> sample_indices(std::size_t n, Rng& rng) const;
  Batch sample(std::size_t n, Rng& rng) const;

 private:
  std::size_t capacity_;
  std::vector<env::Transition> data_;
  std::size_t head_ = 0;  // slot that the next push overwrites once full
  std::uint64_t pushed_ = 0;
};

nn::Tensor2 concat_columns(const nn::Tensor2& a, const nn::Tensor2& b);

class Td3Agent {
 public:
  Td3Agent() = default;
  Td3Agent(std::size_t obs_dim, std::size_t act_dim, const Td3Config& cfg, Rng& rng);

  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t act_dim() const { return act_dim_; }
  const Td3Config& config() const { return cfg_; }
  Td3Config& config() { return cfg_; }

  // Actor output, plus N(0, explore_sigma) when exploring, clipped to [-1, 1].
  std::vector<double> select_action(std::span<const double> obs, bool explore, Rng& rng) const;

  // r + (1 - done) * gamma * min(Q1', Q2')(s', clip(pi'(s') + clip(N(0, sigma), -c, c), -1, 1))
  nn::Tensor2 td_target(const Batch& batch, Rng& rng) const;
  // Same, with the smoothing noise supplied (n x act_dim).
  nn::Tensor2 td_target(const Batch& batch, const nn::Tensor2& noise) const;

  struct CriticLosses {
    double q1 = 0.0;
    double q2 = 0.0;
  };
  CriticLosses update_critics(const Batch& batch, Rng& rng);
  CriticLosses update_critics(const Batch& batch, const nn::Tensor2& target);

  // Parameter gradient of mean(-Q1(s, pi(s)) + action_l2 * ||pi(s)||^2) with respect to the actor.
  nn::Gradients actor_gradients(const Batch& batch, double* loss = nullptr);

  // Only when step % policy_delay == 0: one actor Adam step, then soft
  // updates of all three target networks.
  std::optional<double> update_actor_and_targets(const Batch& batch, std::int64_t step);

  nn::MlpNet actor, critic1, critic2;
  nn::MlpNet actor_target, critic1_target, critic2_target;
  nn::AdamState actor_opt, critic1_opt, critic2_opt;

  void save(const std::filesystem::path& dir) const;
  static Td3Agent load(const std::filesystem::path& dir);
  // Actor alone (evaluation).
  static nn::MlpNet load_actor(const std::filesystem::path& dir);

 private:
  std::size_t obs_dim_ = 0;
  std::size_t act_dim_ = 0;
  Td3Config cfg_;
};

// Hindsight relabeling, "future" strategy: each transition gets k copies whose
// goal is the achieved state of a uniformly drawn transition at or after it.
// Transitions that ended in a physical failure (singularity, joint limit,
// collision, out of view) are neither relabeled nor used as goals: that
// failure does not depend on the goal.
std::vector<env::Transition> her_relabel(std::span<const env::Transition> episode, int k, Rng& rng,
                                         const env::GoalEnv& env);

// One transition re-scored against `goal` through the environment's reward path.
env::Transition relabel_transition(const env::Transition& t, std::shared_ptr<const env::GoalState> goal,
                                   const env::GoalEnv& env);

enum class Variant { pure_td3, td3_explore, td3_her_explore, full };

struct VariantFlags {
  bool exploration = false;
  bool her = false;
  bool demonstration = false;
};

VariantFlags flags(Variant v);
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct TrainOptions {
  Variant variant = Variant::full;
  int episodes = 2000;
  std::int64_t max_env_steps = 0;  // 0 = no cap; the last episode is truncated at the cap
  std::int64_t warmup = 1000;
  std::int64_t explore_steps = 5000;
  int her_k = 4;
  double demo_prob = 0.1;
  double demo_radius = 0.03;
  std::size_t buffer_capacity = 1000000;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;  // episodes; 0 disables
  bool wall_clock = true;
  std::filesystem::path out_dir;  // empty: nothing written
  bool resume = false;

  static TrainOptions from_config(const RunConfig& cfg, Variant v);
};

struct EpisodeRecord {
  int episode = 0;
  std::int64_t steps = 0;  // cumulative agent-driven env steps
  double ret = 0.0;
  bool success = false;
  double e_trans_final = 0.0;
  double e_rot_final = 0.0;
  env::Outcome outcome = env::Outcome::running;
  double wall_seconds = 0.0;
};

struct TrainStats {
  std::int64_t env_steps = 0;
  std::int64_t updates = 0;
  std::int64_t exploration_transitions = 0;
  // Agent-driven transitions in the buffer when the first gradient step ran (-1: never).
  std::int64_t live_at_first_update = -1;
  std::int64_t her_transitions = 0;
  std::int64_t demo_transitions = 0;
  int demo_episodes = 0;
};

struct TrainResult {
  Td3Agent agent;
  std::vector<EpisodeRecord> curve;
  TrainStats stats;
};

// A demonstration episode: near-goal reset, then the environment's scripted controller.
std::vector<env::Transition> demonstration_episode(env::GoalEnv& env, double radius, Rng& rng);

TrainResult train(env::GoalEnv& env, const Td3Config& cfg, const TrainOptions& opt);

// episode,steps,return,success,e_trans_final,e_rot_final,outcome,wall_seconds
void write_curve_csv(const std::vector<EpisodeRecord>& curve, const std::filesystem::path& path);
std::vector<EpisodeRecord> read_curve_csv(const std::filesystem::path& path);

// Trailing moving average of returns.
std::vector<double> smoothed_returns(const std::vector<EpisodeRecord>& curve, std::size_t window);

}  // namespace servo::rl
