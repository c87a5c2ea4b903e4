#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "servo/dvs.hpp"
#include "servo/env.hpp"
#include "servo/goal_env.hpp"
#include "servo/nn.hpp"

namespace servo::eval {

// Maps observations to normalized actions. Controllers are cloned once per
// worker thread, so act() may keep per-episode state.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual std::string name() const = 0;
  virtual void begin_trial(int /*trial*/) {}
  virtual std::vector<double> act(env::GoalEnv& env, std::span<const double> obs) = 0;
  virtual std::unique_ptr<Controller> clone() const = 0;
};

class PolicyController : public Controller {
 public:
  explicit PolicyController(nn::MlpNet actor, std::string name = "rl") : actor_(std::move(actor)), name_(std::move(name)) {}
  std::string name() const override { return name_; }
  std::vector<double> act(env::GoalEnv& env, std::span<const double> obs) override;
  std::unique_ptr<Controller> clone() const override { return std::make_unique<PolicyController>(*this); }

 private:
  nn::MlpNet actor_;
  std::string name_;
};

// Direct visual servoing through the servo environment's action interface.
class DvsController : public Controller {
 public:
  explicit DvsController(dvs::DvsConfig cfg) : cfg_(cfg) {}
  std::string name() const override { return "dvs"; }
  std::vector<double> act(env::GoalEnv& env, std::span<const double> obs) override;
  std::unique_ptr<Controller> clone() const override { return std::make_unique<DvsController>(*this); }

 private:
  dvs::DvsConfig cfg_;
};

class ZeroController : public Controller {
 public:
  explicit ZeroController(std::size_t dim) : dim_(dim) {}
  std::string name() const override { return "zero"; }
  std::vector<double> act(env::GoalEnv&, std::span<const double>) override { return std::vector<double>(dim_, 0.0); }
  std::unique_ptr<Controller> clone() const override { return std::make_unique<ZeroController>(*this); }

 private:
  std::size_t dim_;
};

// Plays back recorded action sequences, one per trial index.
class ReplayController : public Controller {
 public:
  explicit ReplayController(std::vector<std::vector<std::vector<double>>> per_trial)
      : actions_(std::move(per_trial)) {}
  std::string name() const override { return "replay"; }
  void begin_trial(int trial) override {
    trial_ = std::size_t(trial);
    cursor_ = 0;
  }
  std::vector<double> act(env::GoalEnv& env, std::span<const double> obs) override;
  std::unique_ptr<Controller> clone() const override { return std::make_unique<ReplayController>(*this); }

 private:
  std::vector<std::vector<std::vector<double>>> actions_;
  std::size_t trial_ = 0;
  std::size_t cursor_ = 0;
};

std::string to_string(env::StartMode m);
env::StartMode start_mode_from_string(const std::string& s);

struct Protocol {
  int setting = 1;
  env::StartMode start = env::StartMode::setting;
  int trials = 100;
  std::uint64_t seed = 0;
};

// Trial i resets from make_rng(seed, "eval-trial", i); two controllers
// evaluated with the same protocol see identical scenes, goals and starts.
Rng trial_rng(std::uint64_t seed, int trial);

struct TrialRecord {
  int trial = 0;
  bool success = false;
  env::Outcome outcome = env::Outcome::running;
  int steps = 0;
  double e_trans = 0.0;
  double e_rot = 0.0;
  double ret = 0.0;

  friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

// Fixed-width bins from 0 plus one overflow bin.
struct Histogram {
  double bin_width = 0.0;
  int bins = 0;
  std::vector<int> counts;

  static Histogram make(double bin_width, int bins);
  void add(double x);
  int total() const;

  friend bool operator==(const Histogram&, const Histogram&) = default;
};

struct EvalReport {
  std::string method;
  int setting = 1;
  std::string start = "setting";
  int trials = 0;
  std::uint64_t seed = 0;
  int successes = 0;
  double success_rate = 0.0;
  Histogram trans = Histogram::make(0.0005, 10);  // converged trials only
  Histogram rot = Histogram::make(0.01, 20);
  std::map<std::string, int> failures;
  double mean_episode_length = 0.0;
  std::vector<TrialRecord> records;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

// Runs every trial to its terminal outcome.
EvalReport evaluate(const env::GoalEnv& prototype, const Controller& controller, const Protocol& protocol,
                    unsigned threads = 1);

EvalReport summarize(std::string method, const Protocol& protocol, std::vector<TrialRecord> records);

struct Interval {
  double low = 0.0;
  double high = 1.0;
};
Interval wilson_interval(int successes, int n, double z = 1.96);

struct Comparison {
  std::string method_a, method_b;
  int setting = 1;
  int trials = 0;
  double rate_a = 0.0, rate_b = 0.0, rate_diff = 0.0;  // a - b
  Interval ci_a, ci_b;
  std::string verdict;  // "a-better", "b-better", "overlap"
  std::vector<int> trans_diff, rot_diff;  // per-bin a - b
  std::map<std::string, int> failure_diff;
};

Comparison compare(const EvalReport& a, const EvalReport& b);

void write_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);
void write_comparison(const Comparison& c, const std::filesystem::path& path);

// success_rates.csv, errors_trans.csv, errors_rot.csv
void write_plot_csvs(std::span<const EvalReport> reports, const std::filesystem::path& dir);

}  // namespace servo::eval
