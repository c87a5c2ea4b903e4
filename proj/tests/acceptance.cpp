// Acceptance run: one PASS/FAIL line per criterion. Tolerances and seeds are
// pinned below. Usage: servo_acceptance [criterion numbers...]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>

#include "servo/config.hpp"
#include "servo/dvs.hpp"
#include "servo/env.hpp"
#include "servo/eval.hpp"
#include "servo/kinematics.hpp"
#include "servo/pipeline.hpp"
#include "servo/td3.hpp"
#include "servo/toy_env.hpp"
#include "support.hpp"

using namespace servo;
namespace st = servo::testing;
namespace fs = std::filesystem;

namespace {

// criterion 1
constexpr int kAutodiffNets = 50;
constexpr double kAutodiffTol = 1e-4;
// criterion 2
constexpr int kKinConfigs = 100;
constexpr double kFkTol = 1e-9;
constexpr double kJacobianTol = 1e-5;
constexpr double kHomomorphismTol = 1e-9;
// criteria 4 and 5
constexpr int kDvsTrials = 50;
constexpr std::uint64_t kDvsSeed = 1;
constexpr double kNearGoalRate = 0.90;
constexpr double kHemisphereGap = 0.30;
// criterion 6
constexpr int kHerEpisodes = 20;
// criterion 7
constexpr double kHerVariantRate = 0.90;
constexpr double kPureRate = 0.30;
constexpr std::uint64_t kToySeed = 0;
// criterion 8
constexpr int kAeCams = 20, kAeObjs = 50;  // 1000 samples
constexpr double kAeValTarget = 0.01;
constexpr std::size_t kAeSmoothWindow = 10;
constexpr double kAeMonotoneSlack = 0.01;  // fraction of the first smoothed value
// criterion 9
constexpr int kE2eTrials = 50;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

fs::path root() {
#ifdef SERVO_TEST_TMP
  return fs::path(SERVO_TEST_TMP) / "acceptance";
#else
  return fs::temp_directory_path() / "servo-acceptance";
#endif
}

RunConfig config_file(const std::string& name) {
  return RunConfig::from_file(fs::path(SERVO_SOURCE_DIR) / "configs" / name);
}

// ---------------------------------------------------------------------------

Verdict autodiff() {
  double worst = 0.0;
  std::size_t max_params = 0;
  for (int i = 0; i < kAutodiffNets; ++i) {
    auto c = st::random_autodiff_case(std::uint64_t(1000 + i));
    max_params = std::max(max_params, c.net.parameter_count());
    c.net.forward(c.probe.x);
    const nn::Gradients g = c.net.backward(c.probe.c);
    worst = std::max(worst, st::relative_error(st::flat_gradient(g), st::fd_parameter_gradient(c.net, c.probe)));
    worst = std::max(worst, st::relative_error(st::to_vector(g.input.data()), st::fd_input_gradient(c.net, c.probe)));
  }
  return {worst < kAutodiffTol && max_params <= 1000,
          fmt("%d nets (<= %zu params), worst relative error %.3e (tol %.0e)", kAutodiffNets, max_params, worst,
              kAutodiffTol)};
}

Verdict kinematics() {
  const kin::DhChain chain = kin::DhChain::ur5e();
  Rng rng(2024);
  std::uniform_real_distribution<double> uq(-EIGEN_PI, EIGEN_PI), ut(-1.0, 1.0);
  double fk = 0.0, jac = 0.0, hom = 0.0;
  for (int i = 0; i < kKinConfigs; ++i) {
    kin::Vector6 q;
    for (int j = 0; j < 6; ++j) q[j] = uq(rng);
    const Eigen::Matrix4d want = st::fk_oracle(chain, q);
    const kin::Pose got = kin::forward_kinematics(chain, q).end_effector;
    fk = std::max(fk, (got.matrix() - want).cwiseAbs().maxCoeff());
    jac = std::max(jac, (kin::geometric_jacobian(chain, q) - st::jacobian_fd_oracle(chain, q)).cwiseAbs().maxCoeff());

    const kin::Pose a = kin::Pose::from_xyz_rpy({ut(rng), ut(rng), ut(rng)}, {uq(rng), uq(rng) / 2, uq(rng)});
    const kin::Pose b = kin::Pose::from_xyz_rpy({ut(rng), ut(rng), ut(rng)}, {uq(rng), uq(rng) / 2, uq(rng)});
    hom = std::max(hom, (kin::twist_transform(a * b) - kin::twist_transform(a) * kin::twist_transform(b))
                            .cwiseAbs()
                            .maxCoeff());
  }
  return {fk < kFkTol && jac < kJacobianTol && hom < kHomomorphismTol,
          fmt("%d configurations: FK %.2e (tol %.0e), Jacobian %.2e (tol %.0e), homomorphism %.2e (tol %.0e)",
              kKinConfigs, fk, kFkTol, jac, kJacobianTol, hom, kHomomorphismTol)};
}

Verdict reward_exactness() {
  using env::Outcome;
  env::RewardWeights w;
  w.phi1 = 64.0;
  w.phi2 = 8.0;
  w.phi3 = 4.0;
  w.phi4 = 0.125;
  int checks = 0, failed = 0;
  const auto expect = [&](double got, double want) {
    ++checks;
    if (got != want) ++failed;
  };
  const std::array<double, 6> a{0.375, 0.5, 0, 0, 0, 0};  // norm 0.625
  const env::Errors before{0.5, 0.25, 0.0625}, after{0.25, 0.5, 0.03125};
  // 64 * 0.25 + 8 * (-0.25) + 4 * 0.03125 - 0.125
  expect(env::compute_reward(before, after, a, Outcome::running, w), 14.0);
  expect(env::compute_reward(before, after, a, Outcome::success, w), 14.0 + 100.0 - 0.625);
  for (Outcome o : {Outcome::diverged_trans, Outcome::diverged_rot, Outcome::singularity, Outcome::joint_limit,
                    Outcome::collision, Outcome::out_of_fov, Outcome::max_steps})
    expect(env::compute_reward(before, after, a, o, w), 14.0 - 100.0);
  expect(env::compute_reward(after, after, a, Outcome::running, w), -0.125);
  expect(env::compute_reward(after, after, a, Outcome::running, env::RewardWeights{}), -0.1);

  // the terminal branches as the classifier reaches them
  const env::RewardWeights d;
  const auto branch = [&](env::Errors e, Outcome physical, bool last, Outcome want) {
    ++checks;
    if (env::classify(e, physical, last, d) != want) ++failed;
  };
  branch({0.001, 0.01, 0}, Outcome::running, false, Outcome::success);
  branch({1.5, 0.01, 0}, Outcome::running, false, Outcome::diverged_trans);
  branch({0.1, 3.0, 0}, Outcome::running, false, Outcome::diverged_rot);
  branch({0.1, 0.1, 0}, Outcome::running, true, Outcome::max_steps);
  for (Outcome o : {Outcome::singularity, Outcome::joint_limit, Outcome::collision, Outcome::out_of_fov})
    branch({0.001, 0.01, 0}, o, false, o);

  // a live zero-action step leaves every error unchanged
  auto e = env::ServoEnv::from_config(RunConfig(), 1, nullptr);
  Rng rng(3);
  e.reset(rng);
  const std::array<double, 6> zero{};
  expect(e.step(zero).reward, -d.phi4);
  return {failed == 0, fmt("%d bit-exact checks, %d mismatches", checks, failed)};
}

// DVS success from a start mode on `setting`, paired through the protocol seed.
eval::EvalReport dvs_report(int setting, env::StartMode start, const fs::path& out) {
  const RunConfig cfg;
  const auto e = env::ServoEnv::from_config(cfg, setting, nullptr);
  eval::Protocol p;
  p.setting = setting;
  p.start = start;
  p.trials = kDvsTrials;
  p.seed = kDvsSeed;
  auto r = eval::evaluate(e, eval::DvsController(dvs::DvsConfig::from_config(cfg)), p);
  fs::create_directories(out);
  eval::write_plot_csvs(std::span<const eval::EvalReport>(&r, 1), out);
  return r;
}

Verdict dvs_near_goal(const fs::path& out) {
  const auto r = dvs_report(1, env::StartMode::near_goal, out);
  return {r.success_rate >= kNearGoalRate,
          fmt("near-goal starts: %d/%d converged (%.0f%%, need >= %.0f%%)", r.successes, r.trials,
              100 * r.success_rate, 100 * kNearGoalRate)};
}

Verdict dvs_degradation(const fs::path& out) {
  const auto near = dvs_report(3, env::StartMode::near_goal, out / "near-goal");
  const auto hemi = dvs_report(3, env::StartMode::hemisphere, out / "hemisphere");
  const double gap = near.success_rate - hemi.success_rate;
  return {gap >= kHemisphereGap, fmt("setting 3: near-goal %.0f%%, hemisphere %.0f%%, gap %.0f points (need >= %.0f)",
                                     100 * near.success_rate, 100 * hemi.success_rate, 100 * gap, 100 * kHemisphereGap)};
}

// Reward of a relabeled transition written out from the stored achieved
// states: error deltas against the substituted goal, the success and
// divergence tests, and the terminal bonus.
struct Recomputed {
  double reward;
  bool done;
  env::Outcome outcome;
};

Recomputed recompute(const env::Transition& t, const env::GoalState& goal, const env::RewardWeights& w) {
  const env::Errors e0 = env::measure(*t.achieved_before, goal);
  const env::Errors e1 = env::measure(*t.achieved, goal);
  env::Outcome o = env::Outcome::running;
  if (e1.trans < w.phi_trans && e1.rot < w.phi_rot)
    o = env::Outcome::success;
  else if (e1.trans > w.div_trans)
    o = env::Outcome::diverged_trans;
  else if (e1.rot > w.div_rot)
    o = env::Outcome::diverged_rot;
  else if (t.last_step)
    o = env::Outcome::max_steps;
  double r = w.phi1 * (e0.trans - e1.trans) + w.phi2 * (e0.rot - e1.rot) + w.phi3 * (e0.img - e1.img) - w.phi4 * 1.0;
  if (o == env::Outcome::success) {
    double sq = 0.0;
    for (double x : t.action) sq += x * x;
    r += 100.0 - std::sqrt(sq);
  } else if (o != env::Outcome::running && (o != env::Outcome::max_steps || w.timeout_is_failure)) {
    r += -100.0;
  }
  return {r, o != env::Outcome::running, o};
}

struct HerTally {
  int relabeled = 0, mismatched = 0, resim_mismatched = 0, final_relabels = 0, final_bad = 0, bad_goal = 0;
};

void check_her(env::GoalEnv& e, std::function<std::vector<double>(Rng&)> policy, HerTally& tally,
               std::uint64_t seed) {
  Rng rng(seed);
  auto replay_env = e.clone();
  for (int ep = 0; ep < kHerEpisodes; ++ep) {
    std::vector<env::Transition> episode;
    e.reset(rng);
    while (!e.done()) episode.push_back(e.step(policy(rng)).transition);
    Rng her_rng(seed * 1000 + std::uint64_t(ep));
    const int k = 4;
    const auto relabeled = rl::her_relabel(episode, k, her_rng, e);
    std::size_t last_ok = episode.size();
    while (last_ok > 0 && env::is_physical_failure(episode[last_ok - 1].outcome)) --last_ok;
    if (relabeled.size() != last_ok * std::size_t(k)) ++tally.bad_goal;
    for (std::size_t i = 0; i < relabeled.size(); ++i) {
      const env::Transition& r = relabeled[i];
      const env::Transition& src = episode[i / std::size_t(k)];
      ++tally.relabeled;
      // "future" goals: an achieved state at or after the source step
      bool future = false;
      for (std::size_t j = i / std::size_t(k); j < last_ok; ++j) future |= episode[j].achieved == r.desired;
      if (!future) ++tally.bad_goal;
      const Recomputed want = recompute(src, *r.desired, e.weights());
      if (r.reward != want.reward || r.done != want.done || r.outcome != want.outcome) ++tally.mismatched;
      // replay the stored action from the stored simulator state under the new goal
      replay_env->restore(r.desired, src.sim_state);
      const env::StepResult live = replay_env->step(src.action);
      if (live.reward != r.reward || live.outcome != r.outcome || live.observation != r.next_obs)
        ++tally.resim_mismatched;
      if (r.desired == src.achieved) {
        ++tally.final_relabels;
        if (!(r.done && r.outcome == env::Outcome::success)) ++tally.final_bad;
      }
    }
  }
}

Verdict her_correctness() {
  HerTally tally;
  toy::PointReachEnv toy_env(toy::ToyConfig{});
  check_her(
      toy_env,
      [](Rng& rng) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        return std::vector<double>{u(rng), u(rng)};
      },
      tally, 11);
  RunConfig cfg;
  cfg.set("env.max_steps", "30");
  auto servo_env = env::ServoEnv::from_config(cfg, 1, nullptr);
  servo_env.set_start_mode(env::StartMode::near_goal);
  // DVS steps with noise: episodes that mix approach, success and wandering
  check_her(
      servo_env,
      [&servo_env](Rng& rng) {
        std::normal_distribution<double> n(0.0, 0.2);
        auto a = servo_env.demonstration_action();
        for (double& x : a) x += n(rng);
        return a;
      },
      tally, 12);
  const bool pass = tally.relabeled > 0 && tally.mismatched == 0 && tally.resim_mismatched == 0 &&
                    tally.final_relabels > 0 && tally.final_bad == 0 && tally.bad_goal == 0;
  return {pass, fmt("%d relabeled transitions: %d reward mismatches, %d replay mismatches, %d bad goals; "
                    "%d self-goal relabels, %d not terminal success",
                    tally.relabeled, tally.mismatched, tally.resim_mismatched, tally.bad_goal, tally.final_relabels,
                    tally.final_bad)};
}

struct ToyResult {
  std::string variant;
  double rate = 0.0;
  std::int64_t steps = 0;
};

std::vector<ToyResult> toy_ablation_runs(const fs::path& out) {
  RunConfig cfg = config_file("toy_ablation.cfg");
  cfg.set("seed", std::to_string(kToySeed));
  std::vector<ToyResult> results;
  for (const char* v : {"pure-td3", "td3-her-explore", "full"}) {
    pipeline::TrainPolicyArgs t;
    t.variant = rl::variant_from_string(v);
    t.env = "toy";
    t.out = out / v;
    const auto trained = pipeline::train_policy(cfg, t);
    pipeline::EvalArgs ev;
    ev.policy = t.out;
    ev.out = out / v / "eval";
    const auto report = pipeline::run_eval(cfg, ev);
    results.push_back({v, report.success_rate, trained.stats.env_steps});
  }
  return results;
}

Verdict toy_ablation(const fs::path& out) {
  const auto r = toy_ablation_runs(out);
  bool pass = true;
  std::string detail;
  for (const auto& x : r) {
    const bool ok = x.steps <= 50000 && (x.variant == "pure-td3" ? x.rate < kPureRate : x.rate >= kHerVariantRate);
    pass &= ok;
    detail += fmt("%s%s %.1f%% after %lld steps", detail.empty() ? "" : ", ", x.variant.c_str(), 100 * x.rate,
                  (long long)x.steps);
  }
  return {pass, detail + fmt(" (need HER variants >= %.0f%%, pure < %.0f%%)", 100 * kHerVariantRate, 100 * kPureRate)};
}

// Shared by criteria 8 and 9: the gen-scenes and train-ae pipeline stages.
ae::AeTrainResult autoencoder_stage(const RunConfig& cfg, const fs::path& out) {
  pipeline::GenScenesArgs g;
  g.out = out / "data";
  g.cams = kAeCams;
  g.objs = kAeObjs;
  pipeline::gen_scenes(cfg, g);
  pipeline::TrainAeArgs t;
  t.data = g.out;
  t.out = out / "ae";
  return pipeline::train_ae(cfg, t);
}

Verdict autoencoder(const fs::path& out) {
  const auto r = autoencoder_stage(config_file("e2e.cfg"), out);
  int hit = -1;
  for (const auto& p : r.curve)
    if (p.val_mse < kAeValTarget) {
      hit = p.epoch;
      break;
    }
  std::vector<double> val;
  for (const auto& p : r.curve) val.push_back(p.val_mse);
  // trailing moving average
  std::vector<double> smooth(val.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    acc += val[i];
    if (i >= kAeSmoothWindow) acc -= val[i - kAeSmoothWindow];
    smooth[i] = acc / double(std::min(i + 1, kAeSmoothWindow));
  }
  double worst_rise = 0.0;
  for (std::size_t i = 1; i < smooth.size(); ++i) worst_rise = std::max(worst_rise, smooth[i] - smooth[i - 1]);
  const double slack = kAeMonotoneSlack * smooth.front();
  const bool pass = r.model.pixel_count() == 32 * 32 && hit >= 0 && hit < 200 && worst_rise <= slack;
  return {pass, fmt("1000 samples, %zu epochs: val MSE %.4g at epoch 0, first below %.2g at epoch %d, final %.4g; "
                    "largest smoothed rise %.2e (allowed %.2e)",
                    r.curve.size(), r.curve.empty() ? 0.0 : r.curve.front().val_mse, kAeValTarget, hit,
                    val.empty() ? 0.0 : val.back(), worst_rise, slack)};
}

struct E2eResult {
  double rl = 0.0, dvs = 0.0;
  double rl_hemi = 0.0, dvs_hemi = 0.0;
  double hours = 0.0;
};

E2eResult e2e_run(const fs::path& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = config_file("e2e.cfg");
  autoencoder_stage(cfg, out);
  pipeline::TrainPolicyArgs t;
  t.variant = rl::Variant::full;
  t.setting = 1;
  t.ae = out / "ae";
  t.out = out / "policy";
  pipeline::train_policy(cfg, t);
  E2eResult r;
  for (const char* start : {"setting", "hemisphere"}) {
    pipeline::CompareDvsArgs c;
    c.policy = t.out;
    c.settings = {1};
    c.start = start;
    c.trials = kE2eTrials;
    c.out = out / (std::string("compare-") + start);
    const auto cmp = pipeline::compare_dvs(cfg, c);
    (std::string(start) == "setting" ? r.rl : r.rl_hemi) = cmp.at(0).rate_a;
    (std::string(start) == "setting" ? r.dvs : r.dvs_hemi) = cmp.at(0).rate_b;
  }
  r.hours = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 3600.0;
  return r;
}

Verdict end_to_end(const fs::path& out) {
  try {
    const auto r = e2e_run(out);
    return {r.rl > r.dvs, fmt("setting 1, %d paired trials: RL %.0f%% vs DVS %.0f%% (need RL > DVS); "
                              "hemisphere starts RL %.0f%% vs DVS %.0f%%; %.2f h",
                              kE2eTrials, 100 * r.rl, 100 * r.dvs, 100 * r.rl_hemi, 100 * r.dvs_hemi, r.hours)};
  } catch (const NumericalError& e) {
    return {false, std::string("numerical abort: ") + e.what()};
  }
}

// Every CSV under `a` must exist byte-identical under `b`.
std::pair<int, int> compare_csvs(const fs::path& a, const fs::path& b) {
  int files = 0, differ = 0;
  for (const auto& f : fs::recursive_directory_iterator(a)) {
    if (!f.is_regular_file() || f.path().extension() != ".csv") continue;
    ++files;
    const fs::path other = b / fs::relative(f.path(), a);
    if (!fs::exists(other) || st::slurp(f.path()) != st::slurp(other)) ++differ;
  }
  return {files, differ};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  const auto wanted = [&](int n) { return only.empty() || only.count(n) > 0; };

  const fs::path a = root() / "run-a", b = root() / "run-b";
  fs::remove_all(root());
  fs::create_directories(a);

  int failures = 0;
  const auto report = [&](int n, const char* name, const std::function<Verdict()>& f) {
    if (!wanted(n)) return;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = f();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d %s  %-28s %s [%.1fs]\n", n, v.pass ? "PASS" : "FAIL", name, v.detail.c_str(), s);
    std::fflush(stdout);
    failures += !v.pass;
  };

  report(1, "autodiff oracle", autodiff);
  report(2, "kinematics oracles", kinematics);
  report(3, "reward exactness", reward_exactness);
  report(4, "DVS local convergence", [&] { return dvs_near_goal(a / "c4"); });
  report(5, "DVS multi-perspective gap", [&] { return dvs_degradation(a / "c5"); });
  report(6, "HER relabel correctness", her_correctness);
  report(7, "toy ablation ordering", [&] { return toy_ablation(a / "c7"); });
  report(8, "autoencoder convergence", [&] { return autoencoder(a / "c8"); });
  report(9, "end-to-end vs DVS", [&] { return end_to_end(a / "c9"); });
  report(10, "determinism", [&] {
    // rerun the CSV-producing criteria of this invocation into a second tree
    const std::vector<std::pair<int, std::function<void(const fs::path&)>>> producers = {
        {4, [](const fs::path& o) { dvs_near_goal(o); }},
        {5, [](const fs::path& o) { dvs_degradation(o); }},
        {7, [](const fs::path& o) { toy_ablation(o); }},
        {9, [](const fs::path& o) { end_to_end(o); }},
    };
    int files = 0, differ = 0;
    std::string which;
    for (const auto& [n, produce] : producers) {
      if (!wanted(n)) continue;
      const std::string c = "c" + std::to_string(n);
      if (!fs::exists(a / c)) return Verdict{false, "missing first run of criterion " + std::to_string(n)};
      produce(b / c);
      const auto [count, d] = compare_csvs(a / c, b / c);
      files += count;
      differ += d;
      which += (which.empty() ? "" : ", ") + std::to_string(n);
    }
    if (which.empty()) return Verdict{false, "none of criteria 4, 5, 7, 9 selected"};
    return Verdict{files > 0 && differ == 0,
                   fmt("%d CSV files from criteria %s: %d differ", files, which.c_str(), differ)};
  });
  return failures == 0 ? 0 : 1;
}
