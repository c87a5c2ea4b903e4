#include "servo/pipeline.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "servo/toy_env.hpp"

namespace servo::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void prepare_out(const RunConfig& cfg, const fs::path& out) {
  if (out.empty()) throw ConfigError("an output directory (--out) is required");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
  cfg.write(out / "config.txt");
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw MissingArtifactError("missing " + p.string());
  return json::parse(in);
}

void write_json(const json& j, const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

std::shared_ptr<const ae::AeModel> load_ae(const fs::path& p) {
  if (p.empty()) throw MissingArtifactError("an autoencoder checkpoint is required (--ae); run train-ae first");
  return std::make_shared<const ae::AeModel>(ae::AeModel::load(resolve_ae_dir(p)));
}

struct PolicyRun {
  std::string env = "servo";
  int setting = 1;
  fs::path ae;
};

PolicyRun read_policy_run(const fs::path& dir) {
  const fs::path meta = dir / "run.json";
  if (!fs::exists(meta))
    throw MissingArtifactError("policy run not found: " + meta.string() + " (run train-policy first)");
  const json j = read_json(meta);
  PolicyRun r;
  r.env = j.at("env").get<std::string>();
  r.setting = j.at("setting").get<int>();
  r.ae = j.value("ae", std::string());
  return r;
}

}  // namespace

fs::path resolve_ae_dir(const fs::path& p) {
  if (fs::exists(p / "autoencoder.json")) return p;
  if (fs::exists(p / "ae" / "autoencoder.json")) return p / "ae";
  throw MissingArtifactError("autoencoder checkpoint not found under " + p.string() + " (run train-ae first)");
}

scene::Dataset gen_scenes(const RunConfig& cfg, const GenScenesArgs& args) {
  if (args.cams < 1 || args.objs < 1) throw ConfigError("--cams and --objs must be >= 1");
  prepare_out(cfg, args.out);
  scene::DatasetSpec spec;
  spec.n_cam = args.cams;
  spec.n_obj = args.objs;
  spec.seed = cfg.get_uint("seed");
  const auto radius = cfg.get_doubles("data.radius");
  if (radius.size() != 2 || !(radius[0] > 0 && radius[0] < radius[1]))
    throw ConfigError("data.radius needs two increasing positive values");
  spec.cap = {radius[0], radius[1], cfg.get_double("data.polar_max")};
  spec.object_range = cfg.get_double("data.object_range");
  spec.scene = scene::Scene::from_config(cfg);
  spec.camera = scene::CameraModel::from_config(cfg);
  return scene::generate_autoencoder_dataset(spec, args.out, worker_threads());
}

ae::AeTrainResult train_ae(const RunConfig& cfg, const TrainAeArgs& args) {
  if (!fs::exists(args.data / "manifest.json"))
    throw MissingArtifactError("dataset not found: " + (args.data / "manifest.json").string() +
                               " (run gen-scenes first)");
  prepare_out(cfg, args.out);
  return ae::train_autoencoder(args.data, ae::AeConfig::from_config(cfg), args.out);
}

rl::TrainResult train_policy(const RunConfig& cfg, const TrainPolicyArgs& args) {
  const rl::Td3Config td3 = rl::Td3Config::from_config(cfg);
  rl::TrainOptions opt = rl::TrainOptions::from_config(cfg, args.variant);
  opt.out_dir = args.out;
  opt.resume = args.resume;

  json meta = {{"format", "servo-policy-run"}, {"variant", rl::to_string(args.variant)}, {"setting", args.setting}};
  std::unique_ptr<env::GoalEnv> e;
  if (args.env == "toy") {
    const toy::ToyConfig tc = toy::ToyConfig::from_config(cfg);
    opt.demo_radius = tc.demo_radius;
    e = std::make_unique<toy::PointReachEnv>(tc);
    meta["env"] = "toy";
  } else if (args.env == "servo") {
    auto model = load_ae(args.ae);
    e = std::make_unique<env::ServoEnv>(env::ServoEnv::from_config(cfg, args.setting, model));
    meta["env"] = "servo";
    meta["ae"] = fs::absolute(resolve_ae_dir(args.ae)).string();
  } else {
    throw ConfigError("unknown environment '" + args.env + "' (servo, toy)");
  }
  prepare_out(cfg, args.out);
  write_json(meta, args.out / "run.json");
  return rl::train(*e, td3, opt);
}

namespace {

std::unique_ptr<env::GoalEnv> make_eval_env(const RunConfig& cfg, const std::string& kind, int setting,
                                            std::shared_ptr<const ae::AeModel> model) {
  if (kind == "toy") return std::make_unique<toy::PointReachEnv>(toy::ToyConfig::from_config(cfg));
  return std::make_unique<env::ServoEnv>(env::ServoEnv::from_config(cfg, setting, std::move(model)));
}

}  // namespace

eval::EvalReport run_eval(const RunConfig& cfg, const EvalArgs& args) {
  eval::Protocol p;
  p.trials = args.trials.value_or(int(cfg.get_int("eval.trials")));
  p.seed = cfg.get_uint("seed");
  p.start = eval::start_mode_from_string(args.start);
  std::unique_ptr<eval::Controller> ctl;
  std::unique_ptr<env::GoalEnv> e;

  if (args.method == "rl") {
    if (args.policy.empty()) throw MissingArtifactError("eval --method rl needs --policy RUN_DIR");
    const PolicyRun run = read_policy_run(args.policy);
    p.setting = args.setting.value_or(run.setting);
    nn::MlpNet actor = rl::Td3Agent::load_actor(args.policy / "policy");
    std::shared_ptr<const ae::AeModel> model;
    if (run.env == "servo") model = load_ae(args.ae.empty() ? run.ae : args.ae);
    e = make_eval_env(cfg, run.env, p.setting, model);
    if (actor.input_size() != e->observation_size() || actor.output_size() != e->action_size())
      throw DimensionError("policy does not match the environment's observation/action sizes");
    ctl = std::make_unique<eval::PolicyController>(std::move(actor));
  } else if (args.method == "dvs") {
    p.setting = args.setting.value_or(1);
    e = make_eval_env(cfg, "servo", p.setting, nullptr);
    ctl = std::make_unique<eval::DvsController>(dvs::DvsConfig::from_config(cfg));
  } else if (args.method == "zero") {
    p.setting = args.setting.value_or(1);
    e = make_eval_env(cfg, "servo", p.setting, nullptr);
    ctl = std::make_unique<eval::ZeroController>(6);
  } else {
    throw ConfigError("unknown eval method '" + args.method + "' (rl, dvs, zero)");
  }
  if (p.setting < 1 || p.setting > 3) throw ConfigError("setting must be 1, 2 or 3");

  prepare_out(cfg, args.out);
  eval::EvalReport report = eval::evaluate(*e, *ctl, p, worker_threads());
  eval::write_report(report, args.out / "report.json");
  eval::write_plot_csvs(std::span<const eval::EvalReport>(&report, 1), args.out);
  return report;
}

std::vector<eval::Comparison> compare_dvs(const RunConfig& cfg, const CompareDvsArgs& args) {
  if (args.policy.empty()) throw MissingArtifactError("compare-dvs needs --policy RUN_DIR");
  const PolicyRun run = read_policy_run(args.policy);
  if (run.env != "servo") throw ConfigError("compare-dvs needs a policy trained on the servo environment");
  nn::MlpNet actor = rl::Td3Agent::load_actor(args.policy / "policy");
  auto model = load_ae(args.ae.empty() ? run.ae : args.ae);
  prepare_out(cfg, args.out);

  eval::PolicyController rl_ctl(std::move(actor));
  eval::DvsController dvs_ctl(dvs::DvsConfig::from_config(cfg));
  std::vector<eval::EvalReport> reports;
  std::vector<eval::Comparison> comparisons;
  for (int setting : args.settings) {
    if (setting < 1 || setting > 3) throw ConfigError("setting must be 1, 2 or 3");
    eval::Protocol p;
    p.setting = setting;
    p.start = eval::start_mode_from_string(args.start);
    p.trials = args.trials.value_or(int(cfg.get_int("eval.trials")));
    p.seed = cfg.get_uint("seed");
    env::ServoEnv e = env::ServoEnv::from_config(cfg, setting, model);
    const fs::path dir = args.out / ("setting-" + std::to_string(setting));
    fs::create_directories(dir);
    auto a = eval::evaluate(e, rl_ctl, p, worker_threads());
    auto b = eval::evaluate(e, dvs_ctl, p, worker_threads());
    eval::write_report(a, dir / "rl.json");
    eval::write_report(b, dir / "dvs.json");
    comparisons.push_back(eval::compare(a, b));
    eval::write_comparison(comparisons.back(), dir / "comparison.json");
    reports.push_back(std::move(a));
    reports.push_back(std::move(b));
  }
  eval::write_plot_csvs(reports, args.out);
  return comparisons;
}

void export_plots(const ExportPlotsArgs& args) {
  if (args.out.empty()) throw ConfigError("an output directory (--out) is required");
  std::vector<eval::EvalReport> reports;
  std::vector<std::pair<std::string, std::vector<rl::EpisodeRecord>>> curves;
  for (const auto& root : args.runs) {
    if (!fs::exists(root)) throw MissingArtifactError("run directory not found: " + root.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file()) files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      if (f.extension() == ".json" && f.parent_path().filename() != "checkpoint") {
        std::ifstream in(f);
        const json j = json::parse(in, nullptr, false);
        if (!j.is_discarded() && j.is_object() && j.value("format", "") == "servo-eval-report")
          reports.push_back(eval::read_report(f));
      } else if (f.filename() == "curve.csv" && f.parent_path().filename() != "checkpoint") {
        curves.emplace_back(fs::relative(f.parent_path(), root.parent_path()).string(), rl::read_curve_csv(f));
      }
    }
  }
  eval::write_plot_csvs(reports, args.out);
  std::ofstream out(args.out / "curves.csv");
  if (!out) throw IoError("cannot write " + (args.out / "curves.csv").string());
  out << "run,episode,steps,return,success,e_trans_final,e_rot_final,outcome,wall_seconds\n";
  char buf[512];
  for (const auto& [name, curve] : curves) {
    for (const auto& r : curve) {
      std::snprintf(buf, sizeof buf, "%s,%d,%lld,%.17g,%d,%.17g,%.17g,%s,%.3f\n", name.c_str(), r.episode,
                    (long long)r.steps, r.ret, int(r.success), r.e_trans_final, r.e_rot_final,
                    env::to_string(r.outcome).c_str(), r.wall_seconds);
      out << buf;
    }
  }
}

}  // namespace servo::pipeline
