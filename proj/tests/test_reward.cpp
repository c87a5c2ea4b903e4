#include <array>
#include <cmath>

#include "doctest.h"
#include "servo/config.hpp"
#include "servo/goal_env.hpp"

using namespace servo;
using namespace servo::env;

namespace {

const std::array<Outcome, 7> kFailures = {Outcome::diverged_trans, Outcome::diverged_rot, Outcome::singularity,
                                          Outcome::joint_limit,    Outcome::collision,    Outcome::out_of_fov,
                                          Outcome::max_steps};

// Dyadic weights and errors: every product and sum below is exact, so the
// expected values hold bit for bit regardless of evaluation order.
RewardWeights dyadic_weights() {
  RewardWeights w;
  w.phi1 = 64.0;
  w.phi2 = 8.0;
  w.phi3 = 4.0;
  w.phi4 = 0.125;
  return w;
}

}  // namespace

TEST_SUITE("reward") {
  TEST_CASE("running step: weighted error decrease minus the step penalty") {
    const RewardWeights w = dyadic_weights();
    const Errors before{0.5, 0.25, 0.0625}, after{0.25, 0.5, 0.03125};
    const std::array<double, 6> a{0.5, 0, 0, 0, 0, 0};
    // 64 * 0.25 + 8 * (-0.25) + 4 * 0.03125 - 0.125 = 16 - 2 + 0.125 - 0.125
    CHECK(compute_reward(before, after, a, Outcome::running, w) == 14.0);
  }

  TEST_CASE("zero-delta step gives exactly -phi4") {
    const Errors e{0.3, 0.7, 0.011};
    const std::array<double, 6> a{0.2, -0.1, 0.3, 0, 0, 0.9};
    CHECK(compute_reward(e, e, a, Outcome::running, RewardWeights{}) == -0.1);
    CHECK(compute_reward(e, e, a, Outcome::running, dyadic_weights()) == -0.125);
  }

  TEST_CASE("success adds 100 minus the action norm") {
    const RewardWeights w = dyadic_weights();
    const Errors before{0.5, 0.25, 0.0}, after{0.0, 0.0, 0.0};
    const std::array<double, 6> a{0.375, 0.5, 0, 0, 0, 0};  // norm 0.625
    // 64 * 0.5 + 8 * 0.25 - 0.125 + 100 - 0.625
    CHECK(compute_reward(before, after, a, Outcome::success, w) == 133.25);
    const std::array<double, 6> zero{};
    CHECK(compute_reward(after, after, zero, Outcome::success, w) == 99.875);
  }

  TEST_CASE("each of the seven failure reasons adds -100") {
    const RewardWeights w = dyadic_weights();
    const Errors before{0.5, 0.25, 0.0}, after{0.25, 0.25, 0.0};
    const std::array<double, 6> a{1, 1, 1, 1, 1, 1};
    for (Outcome o : kFailures) {
      CAPTURE(to_string(o));
      CHECK(compute_reward(before, after, a, o, w) == 16.0 - 0.125 - 100.0);
    }
  }

  TEST_CASE("timeouts can be non-failures") {
    RewardWeights w = dyadic_weights();
    w.timeout_is_failure = false;
    const Errors e{0.5, 0.25, 0.0};
    const std::array<double, 6> a{};
    CHECK(compute_reward(e, e, a, Outcome::max_steps, w) == -0.125);
    CHECK(compute_reward(e, e, a, Outcome::collision, w) == -100.125);
  }

  TEST_CASE("classification precedence") {
    const RewardWeights w;
    const Errors good{0.001, 0.01, 0.0};
    const Errors far_trans{1.5, 0.1, 0.0};
    const Errors far_rot{0.5, 3.0, 0.0};
    const Errors mid{0.01, 0.1, 0.0};
    // physical failures win, even inside the success region
    CHECK(classify(good, Outcome::collision, true, w) == Outcome::collision);
    CHECK(classify(good, Outcome::running, true, w) == Outcome::success);
    CHECK(classify(far_trans, Outcome::running, true, w) == Outcome::diverged_trans);
    CHECK(classify(far_rot, Outcome::running, false, w) == Outcome::diverged_rot);
    CHECK(classify(mid, Outcome::running, true, w) == Outcome::max_steps);
    CHECK(classify(mid, Outcome::running, false, w) == Outcome::running);
    // success needs both thresholds, strictly
    CHECK(classify({0.001, 0.05, 0.0}, Outcome::running, false, w) == Outcome::running);
    CHECK(classify({0.002, 0.0, 0.0}, Outcome::running, false, w) == Outcome::running);
  }

  TEST_CASE("outcome names round trip") {
    for (Outcome o : kFailures) CHECK(outcome_from_string(to_string(o)) == o);
    CHECK(outcome_from_string("success") == Outcome::success);
    CHECK(to_string(Outcome::out_of_fov) == "out-of-fov");
    CHECK(is_physical_failure(Outcome::joint_limit));
    CHECK_FALSE(is_physical_failure(Outcome::diverged_rot));
    CHECK_FALSE(is_failure(Outcome::success));
  }

  TEST_CASE("image error is the float MSE") {
    const std::vector<float> a{0.0f, 0.5f, 1.0f, 0.25f}, b{0.0f, 0.25f, 0.5f, 0.25f};
    CHECK(image_error(a, b) == (0.0625 + 0.25) / 4);
    CHECK_THROWS_AS(image_error(a, std::vector<float>(3)), DimensionError);
  }

  TEST_CASE("evaluate_step measures both states against the goal") {
    GoalState goal, s0, s1;
    goal.point = {0.0, 0.0};
    s0.point = {0.5, 0.0};
    s1.point = {0.0, 0.001};
    RewardWeights w = dyadic_weights();
    const std::array<double, 2> a{0.0, 0.0};
    const auto ev = evaluate_step(s0, s1, goal, a, Outcome::running, false, w);
    CHECK(ev.outcome == Outcome::success);
    CHECK(ev.done);
    CHECK(ev.errors.trans == 0.001);
    CHECK(ev.reward == 64.0 * (0.5 - 0.001) - 0.125 + 100.0);
  }

  TEST_CASE("config-driven weights validate thresholds") {
    RunConfig cfg;
    CHECK(RewardWeights::from_config(cfg).valid());
    cfg.set("env.phi_trans", "2.0");
    CHECK_THROWS_AS(RewardWeights::from_config(cfg), ConfigError);
  }
}
