#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "servo/pipeline.hpp"

namespace {

constexpr int kExitBadConfig = 2;
constexpr int kExitMissingArtifact = 3;
constexpr int kExitNumerical = 4;
constexpr int kExitOther = 1;

struct Globals {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

servo::RunConfig resolve(const Globals& g) {
  servo::RunConfig cfg;
  if (!g.config.empty()) cfg.merge_file(g.config);
  for (const auto& o : g.overrides) cfg.apply_override(o);
  if (g.seed) cfg.set("seed", std::to_string(*g.seed));
  return cfg;
}

void print_comparison(const servo::eval::Comparison& c) {
  std::printf("setting %d: %s %.3f [%.3f, %.3f]  %s %.3f [%.3f, %.3f]  -> %s\n", c.setting, c.method_a.c_str(),
              c.rate_a, c.ci_a.low, c.ci_a.high, c.method_b.c_str(), c.rate_b, c.ci_b.low, c.ci_b.high,
              c.verdict.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  using namespace servo;
  CLI::App app{"Latent-space visual servoing: data generation, training and evaluation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Config file (key = value per line)")->check(CLI::ExistingFile);
  app.add_option("--set", g.overrides, "Override a config key: --set key=value (repeatable)");
  app.add_option("--seed", g.seed, "Master seed (overrides the `seed` key)");

  pipeline::GenScenesArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-scenes", "Render the autoencoder depth-image dataset");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--cams", gen.cams, "Camera poses")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--objs", gen.objs, "Object poses per camera pose")->check(CLI::PositiveNumber);

  pipeline::TrainAeArgs ae;
  auto* ae_cmd = app.add_subcommand("train-ae", "Train the depth-image autoencoder");
  ae_cmd->add_option("--data", ae.data, "Dataset directory from gen-scenes")->required();
  ae_cmd->add_option("--out", ae.out, "Output directory")->required();

  pipeline::TrainPolicyArgs tp;
  std::string variant = "full";
  auto* tp_cmd = app.add_subcommand("train-policy", "Train a TD3 servoing policy");
  tp_cmd->add_option("--variant", variant, "pure-td3, td3-explore, td3-her-explore or full")
      ->check(CLI::IsMember({"pure-td3", "td3-explore", "td3-her-explore", "full"}));
  tp_cmd->add_option("--setting", tp.setting, "Experimental setting")->check(CLI::Range(1, 3));
  tp_cmd->add_option("--env", tp.env, "servo or toy")->check(CLI::IsMember({"servo", "toy"}));
  tp_cmd->add_option("--ae", tp.ae, "Autoencoder run directory (servo env)");
  tp_cmd->add_option("--out", tp.out, "Output directory")->required();
  tp_cmd->add_flag("--resume", tp.resume, "Continue from <out>/checkpoint");

  pipeline::EvalArgs ev;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate a controller over seeded trials");
  ev_cmd->add_option("--method", ev.method, "rl, dvs or zero")->check(CLI::IsMember({"rl", "dvs", "zero"}));
  ev_cmd->add_option("--policy", ev.policy, "train-policy run directory (method rl)");
  ev_cmd->add_option("--ae", ev.ae, "Autoencoder run directory (defaults to the one used in training)");
  ev_cmd->add_option("--setting", ev.setting, "Experimental setting")->check(CLI::Range(1, 3));
  ev_cmd->add_option("--start", ev.start, "setting, home, hemisphere or near-goal")
      ->check(CLI::IsMember({"setting", "home", "hemisphere", "near-goal"}));
  ev_cmd->add_option("--trials", ev.trials, "Number of trials")->check(CLI::NonNegativeNumber);
  ev_cmd->add_option("--out", ev.out, "Output directory")->required();

  pipeline::CompareDvsArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare-dvs", "Paired RL vs DVS evaluation per setting");
  cmp_cmd->add_option("--policy", cmp.policy, "train-policy run directory")->required();
  cmp_cmd->add_option("--ae", cmp.ae, "Autoencoder run directory (defaults to the one used in training)");
  cmp_cmd->add_option("--setting", cmp.settings, "Settings to compare (repeatable)")->check(CLI::Range(1, 3));
  cmp_cmd->add_option("--start", cmp.start, "setting, home, hemisphere or near-goal")
      ->check(CLI::IsMember({"setting", "home", "hemisphere", "near-goal"}));
  cmp_cmd->add_option("--trials", cmp.trials, "Trials per setting")->check(CLI::NonNegativeNumber);
  cmp_cmd->add_option("--out", cmp.out, "Output directory")->required();

  pipeline::ExportPlotsArgs ex;
  auto* ex_cmd = app.add_subcommand("export-plots", "Aggregate reports and curves into plot CSVs");
  ex_cmd->add_option("--runs", ex.runs, "Run directories to scan")->required()->check(CLI::ExistingDirectory);
  ex_cmd->add_option("--out", ex.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitBadConfig;
  }

  try {
    if (gen_cmd->parsed()) {
      const auto d = pipeline::gen_scenes(resolve(g), gen);
      std::printf("wrote %zu samples to %s\n", d.count(), gen.out.c_str());
    } else if (ae_cmd->parsed()) {
      const auto r = pipeline::train_ae(resolve(g), ae);
      const double val = r.curve.empty() ? 0.0 : r.curve.back().val_mse;
      std::printf("trained %zu epochs, val mse %.6g, checkpoint %s\n", r.curve.size(), val,
                  (ae.out / "ae").c_str());
    } else if (tp_cmd->parsed()) {
      tp.variant = rl::variant_from_string(variant);
      const auto r = pipeline::train_policy(resolve(g), tp);
      std::printf("%zu episodes, %lld env steps, %lld updates, policy %s\n", r.curve.size(),
                  (long long)r.stats.env_steps, (long long)r.stats.updates, (tp.out / "policy").c_str());
    } else if (ev_cmd->parsed()) {
      const auto r = pipeline::run_eval(resolve(g), ev);
      std::printf("%s setting %d start %s: %d/%d success (%.3f)\n", r.method.c_str(), r.setting, r.start.c_str(),
                  r.successes, r.trials, r.success_rate);
    } else if (cmp_cmd->parsed()) {
      for (const auto& c : pipeline::compare_dvs(resolve(g), cmp)) print_comparison(c);
    } else if (ex_cmd->parsed()) {
      pipeline::export_plots(ex);
      std::printf("wrote plot data to %s\n", ex.out.c_str());
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitBadConfig;
  } catch (const MissingArtifactError& e) {
    std::cerr << "missing artifact: " << e.what() << '\n';
    return kExitMissingArtifact;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return 0;
}
