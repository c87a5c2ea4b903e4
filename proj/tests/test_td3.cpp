#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "servo/config.hpp"
#include "servo/td3.hpp"
#include "servo/toy_env.hpp"
#include "support.hpp"

using namespace servo;
using namespace servo::rl;
namespace st = servo::testing;

namespace {

env::Transition dummy(double tag) {
  env::Transition t;
  t.obs = {tag, 0.0};
  t.next_obs = {tag, 1.0};
  t.action = {tag};
  t.reward = tag;
  return t;
}

Td3Config small_td3() {
  Td3Config c;
  c.actor_hidden = {16};
  c.critic_hidden = {16};
  c.batch = 8;
  return c;
}

Batch random_batch(std::size_t n, std::size_t od, std::size_t ad, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Batch b{nn::Tensor2(n, od), nn::Tensor2(n, ad), nn::Tensor2(n, 1), nn::Tensor2(n, od), nn::Tensor2(n, 1)};
  for (auto* t : {&b.obs, &b.action, &b.reward, &b.next_obs}) for (auto& v : t->storage()) v = g(rng);
  for (std::size_t i = 0; i < n; ++i) b.done(i, 0) = i % 3 == 0 ? 1.0 : 0.0;
  return b;
}

// Toy episode driven by a fixed action sequence.
std::vector<env::Transition> toy_episode(toy::PointReachEnv& e, std::vector<double> start, std::vector<double> goal,
                                         const std::vector<std::vector<double>>& actions) {
  e.reset_to(std::move(start), std::move(goal));
  std::vector<env::Transition> ep;
  for (const auto& a : actions) {
    if (e.done()) break;
    ep.push_back(e.step(a).transition);
  }
  return ep;
}

}  // namespace

TEST_SUITE("td3") {
  TEST_CASE("replay buffer evicts FIFO and indexes from the oldest") {
    ReplayBuffer b(3);
    for (int i = 0; i < 5; ++i) b.push(dummy(i));
    CHECK(b.size() == 3);
    CHECK(b.total_pushed() == 5);
    CHECK(b.at(0).reward == 2);
    CHECK(b.at(2).reward == 4);
    CHECK_THROWS_AS(b.at(3), std::out_of_range);
    Rng rng(1);
    for (auto i : b.sample_indices(50, rng)) CHECK(i < 3);
    const Batch batch = b.sample(4, rng);
    CHECK(batch.obs.rows() == 4);
    CHECK(batch.obs(0, 0) == batch.reward(0, 0));
    CHECK_THROWS_AS(ReplayBuffer(0), ConfigError);
  }

  TEST_CASE("TD target: r for terminal rows, r + gamma * min(Q1', Q2') otherwise") {
    Rng rng(2);
    Td3Agent agent(3, 2, small_td3(), rng);
    const Batch b = random_batch(6, 3, 2, rng);
    nn::Tensor2 noise(6, 2, 0.1);
    const nn::Tensor2 y = agent.td_target(b, noise);
    for (std::size_t i = 0; i < 6; ++i) {
      std::vector<double> sa(b.next_obs.row_span(i).begin(), b.next_obs.row_span(i).end());
      auto a = agent.actor_target.predict_one(b.next_obs.row_span(i));
      for (double& x : a) sa.push_back(std::clamp(x + 0.1, -1.0, 1.0));
      const double q = std::min(agent.critic1_target.predict_one(sa)[0], agent.critic2_target.predict_one(sa)[0]);
      const double want = b.done(i, 0) != 0.0 ? b.reward(i, 0) : b.reward(i, 0) + 0.99 * q;
      CHECK(y(i, 0) == doctest::Approx(want).epsilon(1e-12));
    }
  }

  TEST_CASE("critic update descends the squared TD error") {
    Rng rng(3);
    Td3Agent agent(3, 2, small_td3(), rng);
    const Batch b = random_batch(16, 3, 2, rng);
    const nn::Tensor2 y = agent.td_target(b, nn::Tensor2(16, 2));
    const auto first = agent.update_critics(b, y);
    Td3Agent::CriticLosses last;
    for (int i = 0; i < 50; ++i) last = agent.update_critics(b, y);
    CHECK(last.q1 < first.q1);
    CHECK(last.q2 < first.q2);
  }

  TEST_CASE("actor gradient matches finite differences of the actor loss") {
    Rng rng(4);
    Td3Config cfg = small_td3();
    cfg.action_l2 = 0.5;
    Td3Agent agent(3, 2, cfg, rng);
    const Batch b = random_batch(5, 3, 2, rng);
    const auto loss_of = [&](const nn::MlpNet& actor) {
      const nn::Tensor2 a = actor.predict(b.obs);
      const nn::Tensor2 q = agent.critic1.predict(concat_columns(b.obs, a));
      return (-q.map().sum() + 0.5 * a.map().squaredNorm()) / 5.0;
    };
    const nn::Gradients g = agent.actor_gradients(b);
    nn::MlpNet work = agent.actor;
    auto theta = agent.actor.flatten();
    Eigen::VectorXd fd(Eigen::Index(theta.size()));
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double keep = theta[k];
      theta[k] = keep + 1e-6;
      work.unflatten(theta);
      const double lp = loss_of(work);
      theta[k] = keep - 1e-6;
      work.unflatten(theta);
      const double lm = loss_of(work);
      theta[k] = keep;
      fd[Eigen::Index(k)] = (lp - lm) / 2e-6;
    }
    CHECK(st::relative_error(st::flat_gradient(g), fd) < 1e-5);
  }

  TEST_CASE("actor and targets move only every policy_delay steps") {
    Rng rng(5);
    Td3Agent agent(3, 2, small_td3(), rng);
    const Batch b = random_batch(8, 3, 2, rng);
    // move the critic first so its target has somewhere to go
    agent.update_critics(b, rng);
    const nn::MlpNet actor0 = agent.actor, target0 = agent.critic1_target, atarget0 = agent.actor_target;
    CHECK_FALSE(agent.update_actor_and_targets(b, 1).has_value());
    CHECK(agent.actor == actor0);
    CHECK(agent.critic1_target == target0);
    CHECK(agent.actor_target == atarget0);
    CHECK(agent.update_actor_and_targets(b, 2).has_value());
    CHECK_FALSE(agent.actor == actor0);
    CHECK_FALSE(agent.critic1_target == target0);
    CHECK_FALSE(agent.actor_target == atarget0);
  }

  TEST_CASE("exploration noise stays in the action box; greedy actions are deterministic") {
    Rng rng(6);
    Td3Agent agent(4, 3, small_td3(), rng);
    const std::vector<double> obs{0.1, -0.3, 2.0, 0.0};
    Rng r1(1), r2(2);
    CHECK(agent.select_action(obs, false, r1) == agent.select_action(obs, false, r2));
    for (int i = 0; i < 100; ++i)
      for (double a : agent.select_action(obs, true, r1)) {
        CHECK(a >= -1.0);
        CHECK(a <= 1.0);
      }
  }

  TEST_CASE("agent checkpoint round trip") {
    Rng rng(7);
    Td3Agent agent(4, 2, small_td3(), rng);
    const auto dir = st::scratch_dir("td3");
    agent.save(dir);
    const Td3Agent back = Td3Agent::load(dir);
    CHECK(back.actor == agent.actor);
    CHECK(back.critic2_target == agent.critic2_target);
    CHECK(back.config().action_l2 == agent.config().action_l2);
    CHECK(Td3Agent::load_actor(dir) == agent.actor);
    CHECK_THROWS_AS(Td3Agent::load(dir / "missing"), Error);
  }

  TEST_CASE("HER: relabeled rewards follow the reward path; final relabels succeed") {
    toy::PointReachEnv e(toy::ToyConfig{});
    const std::vector<std::vector<double>> actions(6, std::vector<double>{0.5, 0.25});
    const auto ep = toy_episode(e, {0.0, 0.0}, {0.9, -0.9}, actions);
    REQUIRE(ep.size() == 6);
    Rng rng(8);
    const auto extra = her_relabel(ep, 4, rng, e);
    CHECK(extra.size() == 24);
    for (std::size_t i = 0; i < extra.size(); ++i) {
      const auto& t = extra[i];
      CHECK(t.relabeled);
      CHECK(std::vector<double>(t.obs.begin() + 2, t.obs.end()) == t.desired->point);
      const auto ev = env::evaluate_step(*t.achieved_before, *t.achieved, *t.desired, t.action, env::Outcome::running,
                                         t.last_step, e.weights());
      CHECK(ev.reward == t.reward);
      CHECK(ev.done == t.done);
    }
    // the last transition can only be relabeled with its own achieved state
    for (std::size_t j = 20; j < 24; ++j) {
      CHECK(extra[j].outcome == env::Outcome::success);
      CHECK(extra[j].done);
    }
  }

  TEST_CASE("HER skips physical failures") {
    toy::PointReachEnv e(toy::ToyConfig{});
    const std::vector<std::vector<double>> actions(3, std::vector<double>{0.5, 0.0});
    auto ep = toy_episode(e, {0.0, 0.0}, {0.9, 0.0}, actions);
    ep.back().outcome = env::Outcome::collision;
    Rng rng(9);
    const auto extra = her_relabel(ep, 2, rng, e);
    CHECK(extra.size() == 4);
    for (const auto& t : extra) CHECK(t.desired != ep.back().achieved);
    CHECK(her_relabel(ep, 0, rng, e).empty());
  }

  TEST_CASE("variant names") {
    for (const char* s : {"pure-td3", "td3-explore", "td3-her-explore", "full"})
      CHECK(to_string(variant_from_string(s)) == s);
    CHECK_THROWS_AS(variant_from_string("sac"), ConfigError);
    CHECK_FALSE(flags(Variant::pure_td3).exploration);
    CHECK(flags(Variant::td3_explore).exploration);
    CHECK_FALSE(flags(Variant::td3_explore).her);
    CHECK(flags(Variant::full).demonstration);
  }

  TEST_CASE("training bookkeeping: exploration precedes updates, HER and demos fill the buffer") {
    toy::PointReachEnv e(toy::ToyConfig{});
    Td3Config cfg = small_td3();
    TrainOptions opt;
    opt.episodes = 30;
    opt.explore_steps = 300;
    opt.warmup = 100;
    opt.demo_prob = 0.5;
    opt.demo_radius = 0.5;
    opt.wall_clock = false;

    opt.variant = Variant::pure_td3;
    const auto pure = train(e, cfg, opt);
    CHECK(pure.stats.exploration_transitions == 0);
    CHECK(pure.stats.her_transitions == 0);
    CHECK(pure.stats.demo_episodes == 0);
    CHECK(pure.curve.size() == 30);

    opt.variant = Variant::full;
    const auto full = train(e, cfg, opt);
    CHECK(full.stats.exploration_transitions == 300);
    CHECK(full.stats.live_at_first_update >= 300);
    CHECK(full.stats.her_transitions > 0);
    CHECK(full.stats.demo_episodes > 0);
    // the curve's step counter includes the exploration phase
    CHECK(full.stats.env_steps == full.curve.back().steps);
    CHECK(full.curve.front().steps > 300);

    const auto again = train(e, cfg, opt);
    CHECK(again.agent.actor == full.agent.actor);
    CHECK(again.stats.updates == full.stats.updates);
  }

  TEST_CASE("checkpoint and resume reproduce an uninterrupted run's curve length") {
    toy::PointReachEnv e(toy::ToyConfig{});
    TrainOptions opt;
    opt.variant = Variant::td3_her_explore;
    opt.episodes = 20;
    opt.explore_steps = 100;
    opt.warmup = 50;
    opt.checkpoint_every = 10;
    opt.wall_clock = false;
    opt.out_dir = st::scratch_dir("resume");
    opt.episodes = 10;
    train(e, small_td3(), opt);
    opt.episodes = 20;
    opt.resume = true;
    const auto resumed = train(e, small_td3(), opt);
    CHECK(resumed.curve.size() == 20);
    CHECK(resumed.curve[12].episode == 12);
    CHECK(std::filesystem::exists(opt.out_dir / "policy" / "agent.json"));
    CHECK(read_curve_csv(opt.out_dir / "curve.csv").size() == 20);
    opt.out_dir = st::scratch_dir("resume-missing");
    CHECK_THROWS_AS(train(e, small_td3(), opt), MissingArtifactError);
  }

  TEST_CASE("curve CSV round trip and smoothing") {
    std::vector<EpisodeRecord> c(3);
    for (int i = 0; i < 3; ++i) {
      c[std::size_t(i)].episode = i;
      c[std::size_t(i)].ret = double(i) * 1.5;
      c[std::size_t(i)].outcome = env::Outcome::max_steps;
    }
    const auto dir = st::scratch_dir("curve");
    write_curve_csv(c, dir / "c.csv");
    const auto back = read_curve_csv(dir / "c.csv");
    REQUIRE(back.size() == 3);
    CHECK(back[2].ret == 3.0);
    CHECK(back[1].outcome == env::Outcome::max_steps);
    const auto s = smoothed_returns(c, 2);
    CHECK(s[0] == 0.0);
    CHECK(s[1] == 0.75);
    CHECK(s[2] == 2.25);
  }
}
