#include <benchmark/benchmark.h>

#include "servo/config.hpp"
#include "servo/dvs.hpp"
#include "servo/env.hpp"
#include "servo/kinematics.hpp"
#include "servo/nn.hpp"
#include "servo/scene.hpp"
#include "servo/td3.hpp"

using namespace servo;

namespace {

scene::Pose view() {
  const scene::Scene sc;
  return scene::look_at(sc.cup_center() + Eigen::Vector3d(0.1, 0.05, 0.3), sc.cup_center(), 0.2);
}

void render_depth(benchmark::State& state) {
  const scene::Scene sc;
  const auto cam = scene::CameraModel::from_vfov(32, 32, 45.0 * EIGEN_PI / 180.0, 0.05, 1.5, int(state.range(0)));
  const auto pose = view();
  for (auto _ : state) benchmark::DoNotOptimize(scene::render_depth(sc, pose, cam));
}
BENCHMARK(render_depth)->Arg(1)->Arg(3);

void mlp_forward_backward(benchmark::State& state) {
  Rng rng(1);
  const std::size_t batch = std::size_t(state.range(0));
  nn::MlpNet net({38, 256, 256, 1}, nn::Activation::relu, nn::Activation::identity, rng);
  nn::Tensor2 x(batch, 38, 0.1), g(batch, 1, 1.0);
  for (auto _ : state) {
    net.forward(x);
    benchmark::DoNotOptimize(net.backward(g));
  }
}
BENCHMARK(mlp_forward_backward)->Arg(1)->Arg(256);

void jacobian(benchmark::State& state) {
  const auto chain = kin::DhChain::ur5e();
  kin::Vector6 q;
  q << 0.3, -1.2, 1.4, -1.8, -1.5, 0.2;
  for (auto _ : state) benchmark::DoNotOptimize(kin::geometric_jacobian(chain, q));
}
BENCHMARK(jacobian);

void dvs_step(benchmark::State& state) {
  const scene::Scene sc;
  const auto cam = scene::CameraModel::from_vfov(32, 32, 45.0 * EIGEN_PI / 180.0, 0.05, 1.5, 1);
  const auto pose = view();
  const auto cur = scene::render_depth(sc, pose, cam);
  const auto des = scene::render_depth(sc, kin::integrate_twist(pose, (kin::Vector6() << 0.01, 0, 0, 0, 0, 0.02).finished(), 1.0), cam);
  const dvs::DvsConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(dvs::dvs_step(cur, des, cam, cfg));
}
BENCHMARK(dvs_step);

void td3_update(benchmark::State& state) {
  Rng rng(2);
  const rl::Td3Config cfg;
  rl::Td3Agent agent(52, 6, cfg, rng);
  std::normal_distribution<double> n(0.0, 1.0);
  rl::Batch b{nn::Tensor2(cfg.batch, 52), nn::Tensor2(cfg.batch, 6), nn::Tensor2(cfg.batch, 1),
              nn::Tensor2(cfg.batch, 52), nn::Tensor2(cfg.batch, 1)};
  for (auto* t : {&b.obs, &b.action, &b.reward, &b.next_obs})
    for (auto& v : t->storage()) v = n(rng);
  std::int64_t step = 0;
  for (auto _ : state) {
    agent.update_critics(b, rng);
    benchmark::DoNotOptimize(agent.update_actor_and_targets(b, ++step));
  }
}
BENCHMARK(td3_update)->Unit(benchmark::kMillisecond);

void env_step(benchmark::State& state) {
  auto e = env::ServoEnv::from_config(RunConfig(), 1, nullptr);
  Rng rng(3);
  e.reset(rng);
  const std::array<double, 6> a{0.01, 0, 0, 0, 0, 0};
  for (auto _ : state) {
    if (e.done()) e.reset(rng);
    benchmark::DoNotOptimize(e.step(a));
  }
}
BENCHMARK(env_step);

}  // namespace
BENCHMARK_MAIN();
