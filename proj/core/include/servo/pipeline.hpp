#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "servo/config.hpp"
#include "servo/eval.hpp"
#include "servo/td3.hpp"

// Command implementations behind the `servo` tool. Every command writes the
// fully resolved configuration to <out>/config.txt.
namespace servo::pipeline {

struct GenScenesArgs {
  std::filesystem::path out;
  int cams = 100;
  int objs = 100;
};
scene::Dataset gen_scenes(const RunConfig& cfg, const GenScenesArgs& args);

struct TrainAeArgs {
  std::filesystem::path data;
  std::filesystem::path out;
};
ae::AeTrainResult train_ae(const RunConfig& cfg, const TrainAeArgs& args);

struct TrainPolicyArgs {
  rl::Variant variant = rl::Variant::full;
  int setting = 1;
  std::string env = "servo";  // or "toy"
  std::filesystem::path ae;   // autoencoder run directory (or its ae/ subdirectory)
  std::filesystem::path out;
  bool resume = false;
};
rl::TrainResult train_policy(const RunConfig& cfg, const TrainPolicyArgs& args);

struct EvalArgs {
  std::string method = "rl";  // rl | dvs | zero
  std::filesystem::path policy;  // train-policy run directory
  std::filesystem::path ae;      // overrides the path recorded in the policy run
  std::optional<int> setting;
  std::string start = "setting";
  std::optional<int> trials;
  std::filesystem::path out;
};
eval::EvalReport run_eval(const RunConfig& cfg, const EvalArgs& args);

struct CompareDvsArgs {
  std::filesystem::path policy;
  std::filesystem::path ae;
  std::vector<int> settings{1, 2, 3};
  std::string start = "setting";
  std::optional<int> trials;
  std::filesystem::path out;
};
std::vector<eval::Comparison> compare_dvs(const RunConfig& cfg, const CompareDvsArgs& args);

struct ExportPlotsArgs {
  std::vector<std::filesystem::path> runs;
  std::filesystem::path out;
};
// Gathers every evaluation report and training curve under the run
// directories into success_rates.csv, errors_trans.csv, errors_rot.csv and
// curves.csv.
void export_plots(const ExportPlotsArgs& args);

// Autoencoder checkpoint directory: accepts a train-ae run directory or the
// checkpoint itself.
std::filesystem::path resolve_ae_dir(const std::filesystem::path& p);

}  // namespace servo::pipeline
