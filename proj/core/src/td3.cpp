#include "servo/td3.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "servo/config.hpp"

namespace servo::rl {

using nlohmann::json;

Td3Config Td3Config::from_config(const RunConfig& cfg) {
  Td3Config c;
  c.gamma = cfg.get_double("td3.gamma");
  c.tau = cfg.get_double("td3.tau");
  c.policy_delay = int(cfg.get_int("td3.policy_delay"));
  c.explore_sigma = cfg.get_double("td3.explore_sigma");
  c.target_sigma = cfg.get_double("td3.target_sigma");
  c.target_clip = cfg.get_double("td3.target_clip");
  c.batch = std::size_t(cfg.get_int("td3.batch"));
  c.actor_hidden = cfg.get_sizes("td3.actor_hidden");
  c.critic_hidden = cfg.get_sizes("td3.critic_hidden");
  c.actor_lr = cfg.get_double("td3.actor_lr");
  c.critic_lr = cfg.get_double("td3.critic_lr");
  c.action_l2 = cfg.get_double("td3.action_l2");
  if (!c.valid())
    throw ConfigError("td3.*: need 0 <= gamma < 1, tau in [0, 1], policy_delay >= 1, batch >= 1, sigmas >= 0");
  return c;
}

bool Td3Config::valid() const {
  return gamma >= 0 && gamma < 1 && tau >= 0 && tau <= 1 && policy_delay >= 1 && batch >= 1 &&
         explore_sigma >= 0 && target_sigma >= 0 && target_clip >= 0 && actor_lr > 0 && critic_lr > 0 && action_l2 >= 0;
}

// ---------------------------------------------------------------------------
// replay

Batch make_batch(std::span<const env::Transition* const> items) {
  if (items.empty()) throw Error("cannot build an empty batch");
  const std::size_t n = items.size();
  const std::size_t od = items[0]->obs.size(), ad = items[0]->action.size();
  Batch b{nn::Tensor2(n, od), nn::Tensor2(n, ad), nn::Tensor2(n, 1), nn::Tensor2(n, od), nn::Tensor2(n, 1)};
  for (std::size_t r = 0; r < n; ++r) {
    const env::Transition& t = *items[r];
    if (t.obs.size() != od || t.next_obs.size() != od || t.action.size() != ad)
      throw DimensionError("transitions in a batch differ in shape");
    std::copy(t.obs.begin(), t.obs.end(), b.obs.storage().begin() + std::ptrdiff_t(r * od));
    std::copy(t.next_obs.begin(), t.next_obs.end(), b.next_obs.storage().begin() + std::ptrdiff_t(r * od));
    std::copy(t.action.begin(), t.action.end(), b.action.storage().begin() + std::ptrdiff_t(r * ad));
    b.reward(r, 0) = t.reward;
    b.done(r, 0) = t.done ? 1.0 : 0.0;
  }
  return b;
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("replay buffer capacity must be positive");
}

void ReplayBuffer::push(env::Transition t) {
  ++pushed_;
  if (data_.size() < capacity_) {
    data_.push_back(std::move(t));
    return;
  }
  data_[head_] = std::move(t);
  head_ = (head_ + 1) % capacity_;
}

const env::Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= data_.size()) throw std::out_of_range("replay buffer index");
  return data_[(head_ + i) % data_.size()];
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t n, Rng& rng) const {
  if (data_.empty()) throw Error("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> pick(0, data_.size() - 1);
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = pick(rng);
  return idx;
}

Batch ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  const auto idx = sample_indices(n, rng);
  std::vector<const env::Transition*> items(n);
  for (std::size_t i = 0; i < n; ++i) items[i] = &at(idx[i]);
  return make_batch(items);
}

// ---------------------------------------------------------------------------
// agent

nn::Tensor2 concat_columns(const nn::Tensor2& a, const nn::Tensor2& b) {
  if (a.rows() != b.rows()) throw DimensionError("concat_columns: row counts differ");
  nn::Tensor2 out(a.rows(), a.cols() + b.cols());
  out.map().leftCols(Eigen::Index(a.cols())) = a.map();
  out.map().rightCols(Eigen::Index(b.cols())) = b.map();
  return out;
}

namespace {

std::vector<std::size_t> layer_sizes(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
  std::vector<std::size_t> s{in};
  s.insert(s.end(), hidden.begin(), hidden.end());
  s.push_back(out);
  return s;
}

void check_finite(double loss, const char* what) {
  if (!std::isfinite(loss)) throw NumericalError(std::string(what) + " loss became non-finite");
}

}  // namespace

Td3Agent::Td3Agent(std::size_t obs_dim, std::size_t act_dim, const Td3Config& cfg, Rng& rng)
    : obs_dim_(obs_dim), act_dim_(act_dim), cfg_(cfg) {
  if (!cfg.valid()) throw ConfigError("invalid TD3 configuration");
  if (obs_dim == 0 || act_dim == 0) throw DimensionError("TD3 needs positive observation and action sizes");
  actor = nn::MlpNet(layer_sizes(obs_dim, cfg.actor_hidden, act_dim), nn::Activation::relu, nn::Activation::tanh, rng);
  const auto cs = layer_sizes(obs_dim + act_dim, cfg.critic_hidden, 1);
  critic1 = nn::MlpNet(cs, nn::Activation::relu, nn::Activation::identity, rng);
  critic2 = nn::MlpNet(cs, nn::Activation::relu, nn::Activation::identity, rng);
  actor_target = actor;
  critic1_target = critic1;
  critic2_target = critic2;
  actor_opt = nn::AdamState::for_net(actor, cfg.actor_lr);
  critic1_opt = nn::AdamState::for_net(critic1, cfg.critic_lr);
  critic2_opt = nn::AdamState::for_net(critic2, cfg.critic_lr);
}

std::vector<double> Td3Agent::select_action(std::span<const double> obs, bool explore, Rng& rng) const {
  if (obs.size() != obs_dim_) throw DimensionError("observation size does not match the actor");
  for (double v : obs)
    if (!std::isfinite(v)) throw NumericalError("non-finite observation");
  std::vector<double> a = actor.predict_one(obs);
  if (explore && cfg_.explore_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg_.explore_sigma);
    for (double& x : a) x += noise(rng);
  }
  for (double& x : a) x = std::clamp(x, -1.0, 1.0);
  return a;
}

nn::Tensor2 Td3Agent::td_target(const Batch& batch, Rng& rng) const {
  nn::Tensor2 noise(batch.size(), act_dim_);
  if (cfg_.target_sigma > 0.0) {
    std::normal_distribution<double> n(0.0, cfg_.target_sigma);
    for (double& x : noise.storage()) x = std::clamp(n(rng), -cfg_.target_clip, cfg_.target_clip);
  }
  return td_target(batch, noise);
}

nn::Tensor2 Td3Agent::td_target(const Batch& batch, const nn::Tensor2& noise) const {
  if (batch.size() == 0) throw Error("td_target: empty batch");
  nn::Tensor2 a_next = actor_target.predict(batch.next_obs);
  if (!a_next.same_shape(noise)) throw DimensionError("td_target: noise shape");
  a_next.map() = (a_next.map() + noise.map()).cwiseMax(-1.0).cwiseMin(1.0);
  const nn::Tensor2 sa = concat_columns(batch.next_obs, a_next);
  const nn::Tensor2 q1 = critic1_target.predict(sa);
  const nn::Tensor2 q2 = critic2_target.predict(sa);
  nn::Tensor2 y(batch.size(), 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const double q = std::min(q1(i, 0), q2(i, 0));
    y(i, 0) = batch.done(i, 0) != 0.0 ? batch.reward(i, 0) : batch.reward(i, 0) + cfg_.gamma * q;
  }
  return y;
}

Td3Agent::CriticLosses Td3Agent::update_critics(const Batch& batch, Rng& rng) {
  return update_critics(batch, td_target(batch, rng));
}

Td3Agent::CriticLosses Td3Agent::update_critics(const Batch& batch, const nn::Tensor2& target) {
  const nn::Tensor2 sa = concat_columns(batch.obs, batch.action);
  const double n = double(batch.size());
  CriticLosses losses;
  const auto step = [&](nn::MlpNet& critic, nn::AdamState& opt, double& loss) {
    const nn::Tensor2 q = critic.forward(sa);
    nn::Tensor2 dq(q.rows(), 1);
    dq.map() = q.map() - target.map();
    loss = dq.map().squaredNorm() / n;
    check_finite(loss, "critic");
    dq.map() *= 2.0 / n;
    nn::adam_step(critic, critic.backward(dq), opt);
  };
  step(critic1, critic1_opt, losses.q1);
  step(critic2, critic2_opt, losses.q2);
  return losses;
}

nn::Gradients Td3Agent::actor_gradients(const Batch& batch, double* loss) {
  const nn::Tensor2 a = actor.forward(batch.obs);
  const nn::Tensor2 q = critic1.forward(concat_columns(batch.obs, a));
  const double n = double(batch.size());
  if (loss) *loss = (-q.map().sum() + cfg_.action_l2 * a.map().squaredNorm()) / n;
  nn::Tensor2 dq(q.rows(), 1, -1.0 / n);
  const nn::Gradients gc = critic1.backward(dq);
  nn::Tensor2 da(a.rows(), a.cols());
  da.map() = gc.input.map().rightCols(Eigen::Index(act_dim_)) + (2.0 * cfg_.action_l2 / n) * a.map();
  return actor.backward(da);
}

std::optional<double> Td3Agent::update_actor_and_targets(const Batch& batch, std::int64_t step) {
  if (step % cfg_.policy_delay != 0) return std::nullopt;
  double loss = 0.0;
  const nn::Gradients g = actor_gradients(batch, &loss);
  check_finite(loss, "actor");
  nn::adam_step(actor, g, actor_opt);
  nn::soft_update(actor_target, actor, cfg_.tau);
  nn::soft_update(critic1_target, critic1, cfg_.tau);
  nn::soft_update(critic2_target, critic2, cfg_.tau);
  return loss;
}

namespace {

json sizes_json(const std::vector<std::size_t>& v) { return json(v); }

}  // namespace

void Td3Agent::save(const std::filesystem::path& dir) const {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nn::save_checkpoint(actor, dir / "actor");
  nn::save_checkpoint(critic1, dir / "critic1");
  nn::save_checkpoint(critic2, dir / "critic2");
  nn::save_checkpoint(actor_target, dir / "actor_target");
  nn::save_checkpoint(critic1_target, dir / "critic1_target");
  nn::save_checkpoint(critic2_target, dir / "critic2_target");
  nn::save_adam(actor_opt, dir / "actor_adam");
  nn::save_adam(critic1_opt, dir / "critic1_adam");
  nn::save_adam(critic2_opt, dir / "critic2_adam");
  json m = {{"format", "servo-td3"},
            {"version", 1},
            {"obs_dim", obs_dim_},
            {"act_dim", act_dim_},
            {"gamma", cfg_.gamma},
            {"tau", cfg_.tau},
            {"policy_delay", cfg_.policy_delay},
            {"explore_sigma", cfg_.explore_sigma},
            {"target_sigma", cfg_.target_sigma},
            {"target_clip", cfg_.target_clip},
            {"batch", cfg_.batch},
            {"actor_hidden", sizes_json(cfg_.actor_hidden)},
            {"critic_hidden", sizes_json(cfg_.critic_hidden)},
            {"actor_lr", cfg_.actor_lr},
            {"critic_lr", cfg_.critic_lr},
            {"action_l2", cfg_.action_l2}};
  std::ofstream out(dir / "agent.json");
  if (!out) throw IoError("cannot write " + (dir / "agent.json").string());
  out << m.dump(2) << '\n';
}

Td3Agent Td3Agent::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "agent.json");
  if (!in) throw MissingArtifactError("policy checkpoint not found: " + (dir / "agent.json").string());
  const json m = json::parse(in);
  if (m.value("format", "") != "servo-td3") throw IoError((dir / "agent.json").string() + ": not a TD3 checkpoint");
  Td3Agent a;
  a.obs_dim_ = m.at("obs_dim").get<std::size_t>();
  a.act_dim_ = m.at("act_dim").get<std::size_t>();
  a.cfg_.gamma = m.at("gamma").get<double>();
  a.cfg_.tau = m.at("tau").get<double>();
  a.cfg_.policy_delay = m.at("policy_delay").get<int>();
  a.cfg_.explore_sigma = m.at("explore_sigma").get<double>();
  a.cfg_.target_sigma = m.at("target_sigma").get<double>();
  a.cfg_.target_clip = m.at("target_clip").get<double>();
  a.cfg_.batch = m.at("batch").get<std::size_t>();
  a.cfg_.actor_hidden = m.at("actor_hidden").get<std::vector<std::size_t>>();
  a.cfg_.critic_hidden = m.at("critic_hidden").get<std::vector<std::size_t>>();
  a.cfg_.actor_lr = m.at("actor_lr").get<double>();
  a.cfg_.critic_lr = m.at("critic_lr").get<double>();
  a.cfg_.action_l2 = m.value("action_l2", 0.0);
  a.actor = nn::load_checkpoint(dir / "actor");
  a.critic1 = nn::load_checkpoint(dir / "critic1");
  a.critic2 = nn::load_checkpoint(dir / "critic2");
  a.actor_target = nn::load_checkpoint(dir / "actor_target");
  a.critic1_target = nn::load_checkpoint(dir / "critic1_target");
  a.critic2_target = nn::load_checkpoint(dir / "critic2_target");
  a.actor_opt = nn::load_adam(dir / "actor_adam");
  a.critic1_opt = nn::load_adam(dir / "critic1_adam");
  a.critic2_opt = nn::load_adam(dir / "critic2_adam");
  if (a.actor.input_size() != a.obs_dim_ || a.actor.output_size() != a.act_dim_ ||
      !a.actor_target.same_shape(a.actor) || !a.critic1_target.same_shape(a.critic1) ||
      !a.critic2_target.same_shape(a.critic2))
    throw DimensionError("TD3 checkpoint networks do not match its manifest");
  return a;
}

nn::MlpNet Td3Agent::load_actor(const std::filesystem::path& dir) {
  if (!std::filesystem::exists(dir / "actor.json"))
    throw MissingArtifactError("policy checkpoint not found: " + (dir / "actor.json").string());
  return nn::load_checkpoint(dir / "actor");
}

// ---------------------------------------------------------------------------
// hindsight relabeling

env::Transition relabel_transition(const env::Transition& t, std::shared_ptr<const env::GoalState> goal,
                                   const env::GoalEnv& e) {
  if (!t.achieved_before || !t.achieved || !goal) throw Error("relabel needs stored achieved states");
  env::Transition r = t;
  e.substitute_goal(r.obs, *goal);
  e.substitute_goal(r.next_obs, *goal);
  const env::StepEvaluation ev = env::evaluate_step(*t.achieved_before, *t.achieved, *goal, t.action,
                                                    env::Outcome::running, t.last_step, e.weights());
  r.reward = ev.reward;
  r.done = ev.done;
  r.outcome = ev.outcome;
  r.desired = std::move(goal);
  r.relabeled = true;
  return r;
}

std::vector<env::Transition> her_relabel(std::span<const env::Transition> episode, int k, Rng& rng,
                                         const env::GoalEnv& e) {
  std::vector<env::Transition> out;
  if (k <= 0 || episode.empty()) return out;
  // physical failures can only close an episode
  std::size_t last_ok = episode.size();
  while (last_ok > 0 && env::is_physical_failure(episode[last_ok - 1].outcome)) --last_ok;
  if (last_ok == 0) return out;
  out.reserve(last_ok * std::size_t(k));
  for (std::size_t t = 0; t < last_ok; ++t) {
    std::uniform_int_distribution<std::size_t> pick(t, last_ok - 1);
    for (int j = 0; j < k; ++j) out.push_back(relabel_transition(episode[t], episode[pick(rng)].achieved, e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// training

VariantFlags flags(Variant v) {
  switch (v) {
    case Variant::pure_td3: return {false, false, false};
    case Variant::td3_explore: return {true, false, false};
    case Variant::td3_her_explore: return {true, true, false};
    case Variant::full: return {true, true, true};
  }
  return {};
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::pure_td3: return "pure-td3";
    case Variant::td3_explore: return "td3-explore";
    case Variant::td3_her_explore: return "td3-her-explore";
    case Variant::full: return "full";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::pure_td3, Variant::td3_explore, Variant::td3_her_explore, Variant::full})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown variant '" + s + "' (pure-td3, td3-explore, td3-her-explore, full)");
}

TrainOptions TrainOptions::from_config(const RunConfig& cfg, Variant v) {
  TrainOptions o;
  o.variant = v;
  o.episodes = int(cfg.get_int("train.episodes"));
  o.max_env_steps = cfg.get_int("train.max_env_steps");
  o.warmup = cfg.get_int("td3.warmup");
  o.explore_steps = cfg.get_int("td3.explore_steps");
  o.her_k = int(cfg.get_int("td3.her_k"));
  o.demo_prob = cfg.get_double("demo.prob");
  o.demo_radius = cfg.get_double("demo.radius");
  o.buffer_capacity = std::size_t(cfg.get_int("td3.buffer_capacity"));
  o.seed = cfg.get_uint("seed");
  o.checkpoint_every = int(cfg.get_int("train.checkpoint_every"));
  o.wall_clock = cfg.get_bool("log.wall_clock");
  if (o.episodes < 0 || o.max_env_steps < 0 || o.warmup < 0 || o.explore_steps < 0 || o.her_k < 0 ||
      o.checkpoint_every < 0 || o.buffer_capacity == 0 || o.demo_prob < 0 || o.demo_prob > 1)
    throw ConfigError("train.*/td3.*: counts must be >= 0, buffer capacity > 0, demo.prob in [0, 1]");
  return o;
}

std::vector<env::Transition> demonstration_episode(env::GoalEnv& e, double radius, Rng& rng) {
  std::vector<env::Transition> episode;
  e.reset_near_goal(rng, radius);
  do {
    const std::vector<double> a = e.demonstration_action();
    episode.push_back(e.step(a).transition);
  } while (!e.done());
  return episode;
}

namespace {

struct Streams {
  Rng env, explore, noise, replay, her, demo;
};

std::string rng_text(const Rng& r) {
  std::ostringstream s;
  s << r;
  return s.str();
}

void rng_from_text(Rng& r, const std::string& text) {
  std::istringstream s(text);
  s >> r;
  if (!s) throw IoError("corrupt random-generator state in checkpoint");
}

json stats_json(const TrainStats& s) {
  return {{"env_steps", s.env_steps},
          {"updates", s.updates},
          {"exploration_transitions", s.exploration_transitions},
          {"live_at_first_update", s.live_at_first_update},
          {"her_transitions", s.her_transitions},
          {"demo_transitions", s.demo_transitions},
          {"demo_episodes", s.demo_episodes}};
}

TrainStats stats_from_json(const json& j) {
  TrainStats s;
  s.env_steps = j.at("env_steps").get<std::int64_t>();
  s.updates = j.at("updates").get<std::int64_t>();
  s.exploration_transitions = j.at("exploration_transitions").get<std::int64_t>();
  s.live_at_first_update = j.at("live_at_first_update").get<std::int64_t>();
  s.her_transitions = j.at("her_transitions").get<std::int64_t>();
  s.demo_transitions = j.at("demo_transitions").get<std::int64_t>();
  s.demo_episodes = j.at("demo_episodes").get<int>();
  return s;
}

}  // namespace

TrainResult train(env::GoalEnv& e, const Td3Config& cfg, const TrainOptions& opt) {
  const VariantFlags f = flags(opt.variant);
  TrainResult res;
  Streams rs{make_rng(opt.seed, "env"),   make_rng(opt.seed, "explore"), make_rng(opt.seed, "noise"),
             make_rng(opt.seed, "replay"), make_rng(opt.seed, "her"),     make_rng(opt.seed, "demo")};
  {
    Rng init = make_rng(opt.seed, "agent");
    res.agent = Td3Agent(e.observation_size(), e.action_size(), cfg, init);
  }
  Td3Agent& agent = res.agent;
  TrainStats& st = res.stats;
  ReplayBuffer buffer(opt.buffer_capacity);
  const auto t0 = std::chrono::steady_clock::now();
  double wall_offset = 0.0;
  const auto wall = [&] {
    return opt.wall_clock
               ? wall_offset + std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()
               : 0.0;
  };

  const std::filesystem::path ckpt = opt.out_dir.empty() ? std::filesystem::path() : opt.out_dir / "checkpoint";
  int first_episode = 0;
  bool explored = false;
  if (opt.resume) {
    if (ckpt.empty() || !std::filesystem::exists(ckpt / "train_state.json"))
      throw MissingArtifactError("no checkpoint to resume from under " + ckpt.string());
    agent = Td3Agent::load(ckpt / "agent");
    std::ifstream in(ckpt / "train_state.json");
    const json s = json::parse(in);
    first_episode = s.at("episode").get<int>();
    st = stats_from_json(s.at("stats"));
    explored = s.at("explored").get<bool>();
    wall_offset = s.value("wall_seconds", 0.0);
    rng_from_text(rs.env, s.at("rng").at("env").get<std::string>());
    rng_from_text(rs.explore, s.at("rng").at("explore").get<std::string>());
    rng_from_text(rs.noise, s.at("rng").at("noise").get<std::string>());
    rng_from_text(rs.replay, s.at("rng").at("replay").get<std::string>());
    rng_from_text(rs.her, s.at("rng").at("her").get<std::string>());
    rng_from_text(rs.demo, s.at("rng").at("demo").get<std::string>());
    res.curve = read_curve_csv(ckpt / "curve.csv");
    // The replay buffer is not checkpointed; it refills from the resumed run.
  }

  const auto save_checkpoint = [&](int next_episode) {
    if (ckpt.empty()) return;
    agent.save(ckpt / "agent");
    write_curve_csv(res.curve, ckpt / "curve.csv");
    json s = {{"format", "servo-train-state"},
              {"episode", next_episode},
              {"variant", to_string(opt.variant)},
              {"explored", explored},
              {"wall_seconds", wall()},
              {"stats", stats_json(st)},
              {"rng",
               {{"env", rng_text(rs.env)},
                {"explore", rng_text(rs.explore)},
                {"noise", rng_text(rs.noise)},
                {"replay", rng_text(rs.replay)},
                {"her", rng_text(rs.her)},
                {"demo", rng_text(rs.demo)}}}};
    std::ofstream out(ckpt / "train_state.json");
    if (!out) throw IoError("cannot write " + (ckpt / "train_state.json").string());
    out << s.dump(2) << '\n';
  };

  const auto store_episode = [&](std::vector<env::Transition>& episode) {
    if (f.her) {
      auto extra = her_relabel(episode, opt.her_k, rs.her, e);
      st.her_transitions += std::int64_t(extra.size());
      for (auto& t : episode) buffer.push(std::move(t));
      for (auto& t : extra) buffer.push(std::move(t));
    } else {
      for (auto& t : episode) buffer.push(std::move(t));
    }
    episode.clear();
  };

  const auto gradient_step = [&] {
    if (st.env_steps < opt.warmup || buffer.size() < cfg.batch) return;
    if (st.live_at_first_update < 0) st.live_at_first_update = st.env_steps;
    const Batch b = buffer.sample(cfg.batch, rs.replay);
    agent.update_critics(b, rs.noise);
    ++st.updates;
    agent.update_actor_and_targets(b, st.updates);
  };

  // Exploration phase: uniformly random actions, no gradient steps.
  if (f.exploration && !explored) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<env::Transition> episode;
    std::vector<double> a(e.action_size());
    while (st.exploration_transitions < opt.explore_steps) {
      e.reset(rs.env);
      while (!e.done() && st.exploration_transitions < opt.explore_steps) {
        for (double& x : a) x = u(rs.explore);
        episode.push_back(e.step(a).transition);
        ++st.exploration_transitions;
        ++st.env_steps;
      }
      store_episode(episode);
    }
  }
  explored = true;

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int ep = first_episode; ep < opt.episodes; ++ep) {
    if (opt.max_env_steps > 0 && st.env_steps >= opt.max_env_steps) break;
    if (f.demonstration && unit(rs.demo) < opt.demo_prob) {
      auto demo = demonstration_episode(e, opt.demo_radius, rs.demo);
      if (!demo.empty() && demo.back().outcome == env::Outcome::success) {
        st.demo_transitions += std::int64_t(demo.size());
        ++st.demo_episodes;
        for (auto& t : demo) buffer.push(std::move(t));
      }
    }

    std::vector<double> obs = e.reset(rs.env);
    std::vector<env::Transition> episode;
    EpisodeRecord rec;
    rec.episode = ep;
    const auto budget_left = [&] { return opt.max_env_steps <= 0 || st.env_steps < opt.max_env_steps; };
    // the step budget is hard: the last episode is cut short rather than overrun it
    while (!e.done() && budget_left()) {
      const std::vector<double> a = agent.select_action(obs, true, rs.noise);
      env::StepResult r = e.step(a);
      rec.ret += r.reward;
      obs = std::move(r.observation);
      episode.push_back(std::move(r.transition));
      ++st.env_steps;
      gradient_step();
    }
    rec.outcome = episode.back().outcome;
    rec.success = rec.outcome == env::Outcome::success;
    rec.e_trans_final = e.errors().trans;
    rec.e_rot_final = e.errors().rot;
    rec.steps = st.env_steps;
    rec.wall_seconds = wall();
    store_episode(episode);
    res.curve.push_back(rec);

    if (opt.checkpoint_every > 0 && (ep + 1) % opt.checkpoint_every == 0) save_checkpoint(ep + 1);
  }

  if (!opt.out_dir.empty()) {
    save_checkpoint(int(res.curve.empty() ? first_episode : res.curve.back().episode + 1));
    agent.save(opt.out_dir / "policy");
    write_curve_csv(res.curve, opt.out_dir / "curve.csv");
  }
  return res;
}

void write_curve_csv(const std::vector<EpisodeRecord>& curve, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "episode,steps,return,success,e_trans_final,e_rot_final,outcome,wall_seconds\n";
  char buf[256];
  for (const auto& r : curve) {
    std::snprintf(buf, sizeof buf, "%d,%lld,%.17g,%d,%.17g,%.17g,%s,%.3f\n", r.episode, (long long)r.steps, r.ret,
                  int(r.success), r.e_trans_final, r.e_rot_final, env::to_string(r.outcome).c_str(), r.wall_seconds);
    out << buf;
  }
}

std::vector<EpisodeRecord> read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw MissingArtifactError("curve not found: " + path.string());
  std::vector<EpisodeRecord> curve;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[8];
    for (auto& x : f) std::getline(ss, x, ',');
    EpisodeRecord r;
    r.episode = std::stoi(f[0]);
    r.steps = std::stoll(f[1]);
    r.ret = std::stod(f[2]);
    r.success = f[3] == "1";
    r.e_trans_final = std::stod(f[4]);
    r.e_rot_final = std::stod(f[5]);
    r.outcome = env::outcome_from_string(f[6]);
    r.wall_seconds = std::stod(f[7]);
    curve.push_back(r);
  }
  return curve;
}

std::vector<double> smoothed_returns(const std::vector<EpisodeRecord>& curve, std::size_t window) {
  std::vector<double> out(curve.size());
  if (window == 0) window = 1;
  double acc = 0.0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    acc += curve[i].ret;
    if (i >= window) acc -= curve[i - window].ret;
    out[i] = acc / double(std::min(i + 1, window));
  }
  return out;
}

}  // namespace servo::rl
