#include "servo/toy_env.hpp"

#include <algorithm>
#include <cmath>

#include "servo/config.hpp"

namespace servo::toy {

ToyConfig ToyConfig::from_config(const RunConfig& cfg) {
  ToyConfig c;
  c.dim = std::size_t(cfg.get_int("toy.dim"));
  c.dt = cfg.get_double("toy.dt");
  c.a_max = cfg.get_double("toy.a_max");
  c.success_radius = cfg.get_double("toy.success_radius");
  c.arena = cfg.get_double("toy.arena");
  c.max_steps = int(cfg.get_int("toy.max_steps"));
  c.phi1 = cfg.get_double("toy.phi1");
  c.phi4 = cfg.get_double("toy.phi4");
  c.div_trans = cfg.get_double("toy.div_trans");
  c.timeout_is_failure = cfg.get_bool("toy.timeout_is_failure");
  c.demo_radius = cfg.get_double("toy.demo_radius");
  if (c.dim < 1 || c.dt <= 0 || c.a_max <= 0 || c.success_radius <= 0 || c.arena <= 0 || c.max_steps < 1)
    throw ConfigError("toy.*: dim, dt, a_max, success_radius, arena and max_steps must be positive");
  if (!c.weights().valid()) throw ConfigError("toy.*: success radius must lie below toy.div_trans");
  return c;
}

env::RewardWeights ToyConfig::weights() const {
  env::RewardWeights w;
  w.phi1 = phi1;
  w.phi2 = 0.0;
  w.phi3 = 0.0;
  w.phi4 = phi4;
  w.phi_trans = success_radius;
  w.phi_rot = 1.0;  // rotation error is identically zero here
  w.div_trans = div_trans;
  w.div_rot = 10.0;
  w.max_steps = max_steps;
  w.timeout_is_failure = timeout_is_failure;
  return w;
}

PointReachEnv::PointReachEnv(ToyConfig cfg) : cfg_(cfg), weights_(cfg.weights()) {
  if (!weights_.valid()) throw ConfigError("invalid point-reach configuration");
  pos_.assign(cfg_.dim, 0.0);
  achieved_ = goal_ = state_at(pos_);
}

std::shared_ptr<env::GoalState> PointReachEnv::state_at(const std::vector<double>& p) const {
  auto g = std::make_shared<env::GoalState>();
  g->point = p;
  g->code = p;
  return g;
}

std::vector<double> PointReachEnv::observation() const {
  std::vector<double> o = pos_;
  o.insert(o.end(), goal_->code.begin(), goal_->code.end());
  return o;
}

std::vector<double> PointReachEnv::reset_to(std::vector<double> start, std::vector<double> goal) {
  if (start.size() != cfg_.dim || goal.size() != cfg_.dim) throw DimensionError("point-reach: wrong dimension");
  pos_ = std::move(start);
  achieved_ = state_at(pos_);
  goal_ = state_at(goal);
  errors_ = env::measure(*achieved_, *goal_);
  steps_ = 0;
  done_ = false;
  return observation();
}

std::vector<double> PointReachEnv::reset(Rng& rng) {
  std::uniform_real_distribution<double> u(-cfg_.arena, cfg_.arena);
  std::vector<double> s(cfg_.dim), g(cfg_.dim);
  do {
    for (auto& x : g) x = u(rng);
    for (auto& x : s) x = u(rng);
    reset_to(s, g);
  } while (errors_.trans < cfg_.success_radius);
  return observation();
}

std::vector<double> PointReachEnv::reset_near_goal(Rng& rng, double radius) {
  std::uniform_real_distribution<double> u(-cfg_.arena, cfg_.arena);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> g(cfg_.dim), dir(cfg_.dim);
  for (auto& x : g) x = u(rng);
  double norm = 0.0;
  for (auto& x : dir) {
    x = n(rng);
    norm += x * x;
  }
  norm = std::sqrt(norm);
  const double r = radius * unit(rng);
  std::vector<double> s = g;
  if (norm > 0)
    for (std::size_t i = 0; i < s.size(); ++i) s[i] += dir[i] / norm * r;
  return reset_to(s, g);
}

env::StepResult PointReachEnv::step(std::span<const double> action) {
  if (done_) throw Error("step called on a finished episode; call reset first");
  if (action.size() != cfg_.dim) throw DimensionError("point-reach action has the wrong dimension");
  env::StepResult r;
  env::Transition& t = r.transition;
  t.obs = observation();
  t.sim_state = pos_;
  t.sim_state.push_back(double(steps_));
  t.action.resize(cfg_.dim);
  for (std::size_t i = 0; i < cfg_.dim; ++i) {
    t.action[i] = std::clamp(action[i], -1.0, 1.0);
    pos_[i] += t.action[i] * cfg_.a_max * cfg_.dt;
  }
  const auto before = achieved_;
  achieved_ = state_at(pos_);
  ++steps_;
  const bool last = steps_ >= weights_.max_steps;
  const env::StepEvaluation ev =
      env::evaluate_step(*before, *achieved_, *goal_, t.action, env::Outcome::running, last, weights_);
  errors_ = ev.errors;
  done_ = ev.done;

  r.observation = observation();
  r.reward = ev.reward;
  r.done = ev.done;
  r.outcome = ev.outcome;
  r.errors = ev.errors;
  r.last_step = last;
  t.reward = ev.reward;
  t.next_obs = r.observation;
  t.done = ev.done;
  t.outcome = ev.outcome;
  t.last_step = last;
  t.achieved_before = before;
  t.achieved = achieved_;
  t.desired = goal_;
  t.step = steps_ - 1;
  return r;
}

std::vector<double> PointReachEnv::demonstration_action() {
  std::vector<double> a(cfg_.dim);
  double peak = 0.0;
  for (std::size_t i = 0; i < cfg_.dim; ++i) {
    a[i] = (goal_->point[i] - pos_[i]) / (cfg_.a_max * cfg_.dt);
    peak = std::max(peak, std::abs(a[i]));
  }
  if (peak > 1.0)
    for (double& x : a) x /= peak;
  return a;
}

void PointReachEnv::substitute_goal(std::vector<double>& obs, const env::GoalState& goal) const {
  if (obs.size() != observation_size() || goal.code.size() != cfg_.dim)
    throw DimensionError("point-reach goal substitution: wrong sizes");
  std::copy(goal.code.begin(), goal.code.end(), obs.begin() + std::ptrdiff_t(cfg_.dim));
}

std::vector<double> PointReachEnv::restore(std::shared_ptr<const env::GoalState> goal,
                                           std::span<const double> sim_state) {
  if (sim_state.size() != cfg_.dim + 1) throw DimensionError("point-reach sim state has dim + 1 entries");
  if (!goal) throw Error("restore needs a goal");
  goal_ = std::move(goal);
  pos_.assign(sim_state.begin(), sim_state.begin() + std::ptrdiff_t(cfg_.dim));
  achieved_ = state_at(pos_);
  steps_ = int(sim_state[cfg_.dim]);
  errors_ = env::measure(*achieved_, *goal_);
  done_ = false;
  return observation();
}

}  // namespace servo::toy
