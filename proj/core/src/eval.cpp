#include "servo/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "json.hpp"

namespace servo::eval {

using nlohmann::json;

std::vector<double> PolicyController::act(env::GoalEnv&, std::span<const double> obs) {
  std::vector<double> a = actor_.predict_one(obs);
  for (double& x : a) {
    if (!std::isfinite(x)) throw NumericalError("policy produced a non-finite action");
    x = std::clamp(x, -1.0, 1.0);
  }
  return a;
}

std::vector<double> DvsController::act(env::GoalEnv& e, std::span<const double>) {
  auto* se = dynamic_cast<env::ServoEnv*>(&e);
  if (!se) throw Error("the DVS controller needs the servo environment");
  const kin::Twist twist = dvs::dvs_step(se->image(), se->goal()->image, se->camera(), cfg_);
  const auto a = se->config().bounds.to_action(twist);
  return {a.begin(), a.end()};
}

std::vector<double> ReplayController::act(env::GoalEnv& e, std::span<const double>) {
  if (trial_ < actions_.size() && cursor_ < actions_[trial_].size()) return actions_[trial_][cursor_++];
  return std::vector<double>(e.action_size(), 0.0);
}

std::string to_string(env::StartMode m) {
  switch (m) {
    case env::StartMode::setting: return "setting";
    case env::StartMode::home: return "home";
    case env::StartMode::hemisphere: return "hemisphere";
    case env::StartMode::near_goal: return "near-goal";
  }
  return "setting";
}

env::StartMode start_mode_from_string(const std::string& s) {
  for (auto m : {env::StartMode::setting, env::StartMode::home, env::StartMode::hemisphere, env::StartMode::near_goal})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown start mode '" + s + "' (setting, home, hemisphere, near-goal)");
}

Rng trial_rng(std::uint64_t seed, int trial) { return make_rng(seed, "eval-trial", std::uint64_t(trial)); }

Histogram Histogram::make(double bin_width, int bins) {
  Histogram h;
  h.bin_width = bin_width;
  h.bins = bins;
  h.counts.assign(std::size_t(bins) + 1, 0);
  return h;
}

void Histogram::add(double x) {
  const double k = std::floor(x / bin_width);
  const std::size_t i = k < 0 ? 0 : (k >= bins ? std::size_t(bins) : std::size_t(k));
  ++counts[i];
}

int Histogram::total() const {
  int t = 0;
  for (int c : counts) t += c;
  return t;
}

EvalReport summarize(std::string method, const Protocol& p, std::vector<TrialRecord> records) {
  EvalReport r;
  r.method = std::move(method);
  r.setting = p.setting;
  r.start = to_string(p.start);
  r.trials = int(records.size());
  r.seed = p.seed;
  double steps = 0.0;
  for (const auto& t : records) {
    steps += t.steps;
    if (t.success) {
      ++r.successes;
      r.trans.add(t.e_trans);
      r.rot.add(t.e_rot);
    } else {
      ++r.failures[env::to_string(t.outcome)];
    }
  }
  r.success_rate = r.trials > 0 ? double(r.successes) / double(r.trials) : 0.0;
  r.mean_episode_length = r.trials > 0 ? steps / double(r.trials) : 0.0;
  r.records = std::move(records);
  return r;
}

EvalReport evaluate(const env::GoalEnv& prototype, const Controller& controller, const Protocol& p,
                    unsigned threads) {
  if (p.trials < 0) throw ConfigError("trial count must be >= 0");
  std::vector<TrialRecord> records(std::size_t(p.trials));
  std::vector<std::exception_ptr> errors(std::max(1u, threads));

  const auto work = [&](unsigned worker, unsigned stride) {
    try {
      auto e = prototype.clone();
      if (auto* se = dynamic_cast<env::ServoEnv*>(e.get())) se->set_start_mode(p.start);
      auto ctl = controller.clone();
      for (int i = int(worker); i < p.trials; i += int(stride)) {
        Rng rng = trial_rng(p.seed, i);
        ctl->begin_trial(i);
        std::vector<double> obs = e->reset(rng);
        TrialRecord rec;
        rec.trial = i;
        while (!e->done()) {
          const std::vector<double> a = ctl->act(*e, obs);
          env::StepResult s = e->step(a);
          rec.ret += s.reward;
          rec.outcome = s.outcome;
          obs = std::move(s.observation);
        }
        rec.steps = e->steps();
        rec.success = rec.outcome == env::Outcome::success;
        rec.e_trans = e->errors().trans;
        rec.e_rot = e->errors().rot;
        records[std::size_t(i)] = rec;
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };

  threads = std::max(1u, std::min<unsigned>(threads, unsigned(std::max(1, p.trials))));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
    for (auto& th : pool) th.join();
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  return summarize(controller.name(), p, std::move(records));
}

Interval wilson_interval(int successes, int n, double z) {
  if (n <= 0) return {0.0, 1.0};
  const double p = double(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z / denom * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * double(n) * n));
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

Comparison compare(const EvalReport& a, const EvalReport& b) {
  if (a.setting != b.setting || a.trials != b.trials)
    throw ConfigError("cannot compare reports with different settings or trial counts");
  if (a.trans.bins != b.trans.bins || a.trans.bin_width != b.trans.bin_width || a.rot.bins != b.rot.bins ||
      a.rot.bin_width != b.rot.bin_width)
    throw ConfigError("cannot compare reports with different histogram bins");
  Comparison c;
  c.method_a = a.method;
  c.method_b = b.method;
  c.setting = a.setting;
  c.trials = a.trials;
  c.rate_a = a.success_rate;
  c.rate_b = b.success_rate;
  c.rate_diff = a.success_rate - b.success_rate;
  c.ci_a = wilson_interval(a.successes, a.trials);
  c.ci_b = wilson_interval(b.successes, b.trials);
  c.verdict = c.ci_a.low > c.ci_b.high ? "a-better" : (c.ci_b.low > c.ci_a.high ? "b-better" : "overlap");
  for (std::size_t i = 0; i < a.trans.counts.size(); ++i) c.trans_diff.push_back(a.trans.counts[i] - b.trans.counts[i]);
  for (std::size_t i = 0; i < a.rot.counts.size(); ++i) c.rot_diff.push_back(a.rot.counts[i] - b.rot.counts[i]);
  for (const auto& [k, v] : a.failures) c.failure_diff[k] += v;
  for (const auto& [k, v] : b.failures) c.failure_diff[k] -= v;
  return c;
}

namespace {

json histogram_json(const Histogram& h) { return {{"bin_width", h.bin_width}, {"bins", h.bins}, {"counts", h.counts}}; }

Histogram histogram_from_json(const json& j) {
  Histogram h;
  h.bin_width = j.at("bin_width").get<double>();
  h.bins = j.at("bins").get<int>();
  h.counts = j.at("counts").get<std::vector<int>>();
  if (h.counts.size() != std::size_t(h.bins) + 1) throw IoError("histogram has the wrong number of counts");
  return h;
}

}  // namespace

void write_report(const EvalReport& r, const std::filesystem::path& path) {
  json trials = json::array();
  for (const auto& t : r.records)
    trials.push_back({{"trial", t.trial},
                      {"success", t.success},
                      {"outcome", env::to_string(t.outcome)},
                      {"steps", t.steps},
                      {"e_trans", t.e_trans},
                      {"e_rot", t.e_rot},
                      {"return", t.ret}});
  json j = {{"format", "servo-eval-report"},
            {"version", 1},
            {"method", r.method},
            {"setting", r.setting},
            {"start", r.start},
            {"trials", r.trials},
            {"seed", r.seed},
            {"successes", r.successes},
            {"success_rate", r.success_rate},
            {"errors_trans", histogram_json(r.trans)},
            {"errors_rot", histogram_json(r.rot)},
            {"failures", r.failures},
            {"mean_episode_length", r.mean_episode_length},
            {"records", trials}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  // max_digits10 round trip through the JSON number printer
  out << j.dump(2) << '\n';
}

EvalReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("report not found: " + path.string());
  const json j = json::parse(in);
  if (j.value("format", "") != "servo-eval-report") throw IoError(path.string() + ": not an evaluation report");
  EvalReport r;
  r.method = j.at("method").get<std::string>();
  r.setting = j.at("setting").get<int>();
  r.start = j.at("start").get<std::string>();
  r.trials = j.at("trials").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.successes = j.at("successes").get<int>();
  r.success_rate = j.at("success_rate").get<double>();
  r.trans = histogram_from_json(j.at("errors_trans"));
  r.rot = histogram_from_json(j.at("errors_rot"));
  r.failures = j.at("failures").get<std::map<std::string, int>>();
  r.mean_episode_length = j.at("mean_episode_length").get<double>();
  for (const auto& t : j.at("records")) {
    TrialRecord rec;
    rec.trial = t.at("trial").get<int>();
    rec.success = t.at("success").get<bool>();
    rec.outcome = env::outcome_from_string(t.at("outcome").get<std::string>());
    rec.steps = t.at("steps").get<int>();
    rec.e_trans = t.at("e_trans").get<double>();
    rec.e_rot = t.at("e_rot").get<double>();
    rec.ret = t.at("return").get<double>();
    r.records.push_back(rec);
  }
  return r;
}

void write_comparison(const Comparison& c, const std::filesystem::path& path) {
  json j = {{"format", "servo-comparison"},
            {"method_a", c.method_a},
            {"method_b", c.method_b},
            {"setting", c.setting},
            {"trials", c.trials},
            {"rate_a", c.rate_a},
            {"rate_b", c.rate_b},
            {"rate_diff", c.rate_diff},
            {"ci_a", {c.ci_a.low, c.ci_a.high}},
            {"ci_b", {c.ci_b.low, c.ci_b.high}},
            {"verdict", c.verdict},
            {"trans_diff", c.trans_diff},
            {"rot_diff", c.rot_diff},
            {"failure_diff", c.failure_diff}};
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_plot_csvs(std::span<const EvalReport> reports, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream rates(dir / "success_rates.csv"), trans(dir / "errors_trans.csv"), rot(dir / "errors_rot.csv");
  if (!rates || !trans || !rot) throw IoError("cannot write plot CSVs under " + dir.string());
  rates << "method,setting,start,trials,successes,success_rate,ci_low,ci_high,mean_episode_length\n";
  trans << "method,setting,start,bin_low,bin_high,count\n";
  rot << "method,setting,start,bin_low,bin_high,count\n";
  char buf[512];
  for (const auto& r : reports) {
    const Interval ci = wilson_interval(r.successes, r.trials);
    std::snprintf(buf, sizeof buf, "%s,%d,%s,%d,%d,%.17g,%.17g,%.17g,%.17g\n", r.method.c_str(), r.setting,
                  r.start.c_str(), r.trials, r.successes, r.success_rate, ci.low, ci.high, r.mean_episode_length);
    rates << buf;
    for (auto [h, out] : {std::pair{&r.trans, &trans}, std::pair{&r.rot, &rot}}) {
      for (int i = 0; i <= h->bins; ++i) {
        const double lo = i * h->bin_width;
        if (i < h->bins)
          std::snprintf(buf, sizeof buf, "%s,%d,%s,%.17g,%.17g,%d\n", r.method.c_str(), r.setting, r.start.c_str(), lo,
                        lo + h->bin_width, h->counts[std::size_t(i)]);
        else
          std::snprintf(buf, sizeof buf, "%s,%d,%s,%.17g,inf,%d\n", r.method.c_str(), r.setting, r.start.c_str(), lo,
                        h->counts[std::size_t(i)]);
        *out << buf;
      }
    }
  }
}

}  // namespace servo::eval
