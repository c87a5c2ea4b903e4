#include "servo/goal_env.hpp"

#include <cmath>

#include "servo/config.hpp"

namespace servo::env {

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::running: return "running";
    case Outcome::success: return "success";
    case Outcome::diverged_trans: return "diverged-trans";
    case Outcome::diverged_rot: return "diverged-rot";
    case Outcome::singularity: return "singularity";
    case Outcome::joint_limit: return "joint-limit";
    case Outcome::collision: return "collision";
    case Outcome::out_of_fov: return "out-of-fov";
    case Outcome::max_steps: return "max-steps";
  }
  return "running";
}

Outcome outcome_from_string(const std::string& s) {
  for (Outcome o : {Outcome::running, Outcome::success, Outcome::diverged_trans,
                    Outcome::diverged_rot, Outcome::singularity, Outcome::joint_limit,
                    Outcome::collision, Outcome::out_of_fov, Outcome::max_steps})
    if (to_string(o) == s) return o;
  throw Error("unknown outcome '" + s + "'");
}

bool is_physical_failure(Outcome o) {
  return o == Outcome::singularity || o == Outcome::joint_limit || o == Outcome::collision ||
         o == Outcome::out_of_fov;
}

RewardWeights RewardWeights::from_config(const RunConfig& cfg) {
  RewardWeights w;
  w.phi1 = cfg.get_double("env.phi1");
  w.phi2 = cfg.get_double("env.phi2");
  w.phi3 = cfg.get_double("env.phi3");
  w.phi4 = cfg.get_double("env.phi4");
  w.phi_trans = cfg.get_double("env.phi_trans");
  w.phi_rot = cfg.get_double("env.phi_rot");
  w.div_trans = cfg.get_double("env.div_trans");
  w.div_rot = cfg.get_double("env.div_rot");
  w.phi_jacobian = cfg.get_double("kin.phi_jacobian");
  w.max_steps = int(cfg.get_int("env.max_steps"));
  if (!w.valid()) throw ConfigError("env reward weights: need phi >= 0, thresholds below divergence bounds");
  return w;
}

bool RewardWeights::valid() const {
  return phi1 >= 0 && phi2 >= 0 && phi3 >= 0 && phi4 >= 0 && phi_trans > 0 && phi_rot > 0 &&
         phi_trans < div_trans && phi_rot < div_rot && max_steps >= 1;
}

Outcome classify(const Errors& after, Outcome physical, bool last_step, const RewardWeights& w) {
  if (is_physical_failure(physical)) return physical;
  if (after.trans < w.phi_trans && after.rot < w.phi_rot) return Outcome::success;
  if (after.trans > w.div_trans) return Outcome::diverged_trans;
  if (after.rot > w.div_rot) return Outcome::diverged_rot;
  if (last_step) return Outcome::max_steps;
  return Outcome::running;
}

double compute_reward(const Errors& before, const Errors& after, std::span<const double> action,
                      Outcome outcome, const RewardWeights& w) {
  double r = w.phi1 * (before.trans - after.trans) + w.phi2 * (before.rot - after.rot) +
             w.phi3 * (before.img - after.img) - w.phi4 * kStepError;
  if (outcome == Outcome::success) {
    double sq = 0.0;
    for (double a : action) sq += a * a;
    r += kTerminalReward - std::sqrt(sq);
  } else if (is_failure(outcome)) {
    if (outcome != Outcome::max_steps || w.timeout_is_failure) r += -kTerminalReward;
  }
  return r;
}

double image_error(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw DimensionError("image_error: images differ in size");
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s / double(a.size());
}

Errors measure(const GoalState& achieved, const GoalState& goal) {
  Errors e;
  if (!goal.point.empty()) {
    if (achieved.point.size() != goal.point.size()) throw DimensionError("measure: point sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < goal.point.size(); ++i) {
      const double d = achieved.point[i] - goal.point[i];
      s += d * d;
    }
    e.trans = std::sqrt(s);
    return e;
  }
  const auto pe = kin::pose_errors(achieved.pose, goal.pose);
  e.trans = pe.translation;
  e.rot = pe.rotation;
  e.img = image_error(achieved.image, goal.image);
  return e;
}

StepEvaluation evaluate_step(const GoalState& before, const GoalState& after, const GoalState& goal,
                             std::span<const double> action, Outcome physical, bool last_step,
                             const RewardWeights& w) {
  StepEvaluation ev;
  const Errors e0 = measure(before, goal);
  ev.errors = measure(after, goal);
  ev.outcome = classify(ev.errors, physical, last_step, w);
  ev.done = ev.outcome != Outcome::running;
  ev.reward = compute_reward(e0, ev.errors, action, ev.outcome, w);
  return ev;
}

}  // namespace servo::env
