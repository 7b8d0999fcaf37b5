#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdi/features.hpp"
#include "fdi/mlp.hpp"
#include "fdi/policies.hpp"
#include "fdi/ppo.hpp"
#include "fdi/scenario.hpp"

namespace fdi {

constexpr double kActionClampLo = -8.0;
constexpr double kActionClampHi = 8.0;

/// Exponential action map with a reachable zero: a = exp(clamp(u)) - e^lo,
/// capped at a_max. Output is always componentwise >= 0.
inline std::vector<double> attacker_action_transform(const Eigen::VectorXd& u,
                                                     double a_max) {
  const double floor_shift = std::exp(kActionClampLo);
  std::vector<double> a(u.size());
  for (int e = 0; e < u.size(); ++e) {
    const double c = std::clamp(u(e), kActionClampLo, kActionClampHi);
    a[e] = std::min(std::exp(c) - floor_shift, a_max);
  }
  return a;
}

/// Perturbation cap used by learned attackers: 10x the largest free-flow time.
inline double attack_cap(const RoadNetwork& net) {
  double mx = 0.0;
  for (const auto& e : net.edges()) mx = std::max(mx, e.attr.free_flow_time);
  return 10.0 * mx;
}

inline double attacker_reward(const StepMetrics& m) { return m.traveling_weight; }

inline double defender_reward(const StepMetrics& m, double false_alarm_cost) {
  if (false_alarm_cost < 0.0)
    throw std::invalid_argument("defender_reward: C_f < 0");
  return -m.traveling_weight - (m.false_alarm ? false_alarm_cost : 0.0);
}

// ---------------------------------------------------------------------------
// Fixed observation scaling (stored with each policy checkpoint).

inline Eigen::VectorXd attacker_obs_scale(const Scenario& sc) {
  const int ne = sc.net.num_edges();
  double max_c = 1.0, max_f = 1.0;
  for (const auto& e : sc.net.edges()) {
    max_c = std::max(max_c, e.attr.capacity);
    max_f = std::max(max_f, e.attr.free_flow_time);
  }
  const double demand = std::max(1.0, sc.trips.total_demand());
  const double trips = std::max<double>(1.0, sc.trips.size());
  Eigen::VectorXd scale(7 * ne);
  for (int e = 0; e < ne; ++e) {
    scale(7 * e + 0) = 1.0 / demand;
    scale(7 * e + 1) = 1.0 / demand;
    scale(7 * e + 2) = 1.0 / trips;
    scale(7 * e + 3) = 1.0 / demand;
    scale(7 * e + 4) = 1.0 / demand;
    scale(7 * e + 5) = 1.0 / max_c;
    scale(7 * e + 6) = 1.0 / max_f;
  }
  return scale;
}

inline Eigen::VectorXd defender_obs_scale(const Scenario& sc) {
  double max_f = 1.0;
  for (const auto& e : sc.net.edges()) max_f = std::max(max_f, e.attr.free_flow_time);
  const long dim = static_cast<long>(sc.params.history) * sc.net.num_edges();
  return Eigen::VectorXd::Constant(dim, 1.0 / (3.0 * max_f));
}

// ---------------------------------------------------------------------------

class LearnedAttackerPolicy final : public AttackerPolicy {
 public:
  LearnedAttackerPolicy(Mlp mlp, Eigen::VectorXd obs_scale, double a_max)
      : mlp_(std::move(mlp)), obs_scale_(std::move(obs_scale)), a_max_(a_max) {
    if (mlp_.config().head != PolicyHead::kGaussian)
      throw std::invalid_argument("LearnedAttackerPolicy: needs a Gaussian head");
  }

  std::unique_ptr<AttackerAgent> spawn(uint64_t seed) const override {
    return std::make_unique<Agent>(this, seed);
  }

  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }
  const Eigen::VectorXd& obs_scale() const { return obs_scale_; }
  double a_max() const { return a_max_; }

  Eigen::VectorXd observe(const SimState& state, const RoadNetwork& net,
                          const TripTable& trips) const {
    return attacker_observe(state, net, trips).cwiseProduct(obs_scale_);
  }

 private:
  struct Agent final : AttackerAgent {
    Agent(const LearnedAttackerPolicy* p, uint64_t seed) : policy(p), rng(seed) {}
    std::vector<double> act(const StepView& view) override {
      const Eigen::VectorXd obs = policy->observe(view.state, view.net, view.trips);
      const Mlp::Output out = policy->mlp_.forward(obs);
      const GaussianSample s = sample_gaussian(out.dist, out.log_std, rng);
      return attacker_action_transform(s.action, policy->a_max_);
    }
    const LearnedAttackerPolicy* policy;
    RngStream rng;
  };

  Mlp mlp_;
  Eigen::VectorXd obs_scale_;
  double a_max_;
};

class LearnedDefenderPolicy final : public DefenderPolicy {
 public:
  LearnedDefenderPolicy(Mlp mlp, Eigen::VectorXd obs_scale, int history)
      : mlp_(std::move(mlp)), obs_scale_(std::move(obs_scale)), history_(history) {
    if (mlp_.config().head != PolicyHead::kBernoulli)
      throw std::invalid_argument("LearnedDefenderPolicy: needs a Bernoulli head");
    if (history_ < 1) throw std::invalid_argument("LearnedDefenderPolicy: history < 1");
  }

  std::unique_ptr<DefenderAgent> spawn(uint64_t seed) const override {
    return std::make_unique<Agent>(this, seed);
  }

  const Mlp& mlp() const { return mlp_; }
  Mlp& mlp() { return mlp_; }
  const Eigen::VectorXd& obs_scale() const { return obs_scale_; }
  int history() const { return history_; }

  Eigen::VectorXd observe(const std::vector<std::vector<double>>& rows) const {
    return defender_observe(rows, history_).cwiseProduct(obs_scale_);
  }

 private:
  struct Agent final : DefenderAgent {
    Agent(const LearnedDefenderPolicy* p, uint64_t seed) : policy(p), rng(seed) {}
    bool act(const std::vector<std::vector<double>>& observed) override {
      const Mlp::Output out = policy->mlp_.forward(policy->observe(observed));
      return rng.uniform() < sigmoid(out.dist(0));
    }
    const LearnedDefenderPolicy* policy;
    RngStream rng;
  };

  Mlp mlp_;
  Eigen::VectorXd obs_scale_;
  int history_;
};

// ---------------------------------------------------------------------------
// Single-agent environments induced by fixing the opponent's mixed strategy.
// One opponent pure strategy is sampled per episode.

namespace detail {

struct EpisodeSeeds {
  uint64_t engine, opponent_pick, opponent_spawn, jitter;
  static EpisodeSeeds make(uint64_t env_seed, long episode) {
    const uint64_t ep = derive_seed(env_seed, 0x657069, static_cast<uint64_t>(episode));
    return {derive_seed(ep, 1), derive_seed(ep, 2), derive_seed(ep, 3),
            derive_seed(ep, 4)};
  }
};

}  // namespace detail

struct EnvStepResult {
  double reward = 0.0;
  bool done = false;
  bool timeout = false;                     // horizon cut, not a natural end
  std::optional<Eigen::VectorXd> terminal_obs;  // set when done
};

class AttackerTrainEnv {
 public:
  AttackerTrainEnv(const Scenario& scenario, const LearnedAttackerPolicy& learner,
                   const MixedStrategy& opponent, uint64_t env_seed)
      : sc_(scenario), learner_(learner), opponent_(opponent), env_seed_(env_seed) {
    reset();
  }

  const Eigen::VectorXd& obs() const { return obs_; }
  uint64_t action_seed() const { return derive_seed(env_seed_, 0x616374); }

  void reset() {
    const auto seeds = detail::EpisodeSeeds::make(env_seed_, episode_counter_++);
    RngStream jitter_rng(seeds.jitter);
    trips_ = randomize_demands(sc_.trips, sc_.params.demand_jitter_pct, jitter_rng);
    RngStream pick(seeds.opponent_pick);
    const PolicyHandle& opp = opponent_.sample(pick);
    if (!opp.defender)
      throw std::invalid_argument("AttackerTrainEnv: opponent mixture must hold defenders");
    defender_ = opp.defender->spawn(seeds.opponent_spawn);
    engine_.emplace(sc_.net, trips_, sc_.params.theta, seeds.engine);
    t_ = 0;
    engine_->begin_step();
    obs_ = learner_.observe(engine_->state(), sc_.net, trips_);
  }

  EnvStepResult step(const Eigen::VectorXd& u) {
    engine_->set_attack(attacker_action_transform(u, learner_.a_max()));
    const bool alarm = defender_->act(engine_->observation_history_with_current());
    const StepMetrics m = engine_->finish_step(alarm);
    ++t_;
    EnvStepResult r;
    r.reward = attacker_reward(m);
    const bool finished = engine_->all_finished();
    r.done = finished || t_ >= sc_.params.horizon;
    r.timeout = r.done && !finished;
    if (r.done) {
      r.terminal_obs = learner_.observe(engine_->state(), sc_.net, trips_);
      reset();
    } else {
      engine_->begin_step();
      obs_ = learner_.observe(engine_->state(), sc_.net, trips_);
    }
    return r;
  }

 private:
  const Scenario& sc_;
  const LearnedAttackerPolicy& learner_;
  const MixedStrategy& opponent_;
  uint64_t env_seed_;
  long episode_counter_ = 0;
  TripTable trips_;
  std::optional<EpisodeEngine> engine_;
  std::unique_ptr<DefenderAgent> defender_;
  Eigen::VectorXd obs_;
  int t_ = 0;
};

class DefenderTrainEnv {
 public:
  DefenderTrainEnv(const Scenario& scenario, const LearnedDefenderPolicy& learner,
                   const MixedStrategy& opponent, uint64_t env_seed)
      : sc_(scenario), learner_(learner), opponent_(opponent), env_seed_(env_seed) {
    reset();
  }

  const Eigen::VectorXd& obs() const { return obs_; }
  uint64_t action_seed() const { return derive_seed(env_seed_, 0x616374); }

  void reset() {
    const auto seeds = detail::EpisodeSeeds::make(env_seed_, episode_counter_++);
    RngStream jitter_rng(seeds.jitter);
    trips_ = randomize_demands(sc_.trips, sc_.params.demand_jitter_pct, jitter_rng);
    RngStream pick(seeds.opponent_pick);
    const PolicyHandle& opp = opponent_.sample(pick);
    if (!opp.attacker)
      throw std::invalid_argument("DefenderTrainEnv: opponent mixture must hold attackers");
    attacker_ = opp.attacker->spawn(seeds.opponent_spawn);
    engine_.emplace(sc_.net, trips_, sc_.params.theta, seeds.engine);
    t_ = 0;
    prepare_observation();
  }

  EnvStepResult step(const Eigen::VectorXd& action) {
    const StepMetrics m = engine_->finish_step(action(0) >= 0.5);
    ++t_;
    EnvStepResult r;
    r.reward = defender_reward(m, sc_.params.false_alarm_cost);
    const bool finished = engine_->all_finished();
    r.done = finished || t_ >= sc_.params.horizon;
    r.timeout = r.done && !finished;
    if (r.done) {
      // terminal window: pad the history with the final state's true times
      engine_->begin_step();
      engine_->set_attack(std::vector<double>(sc_.net.num_edges(), 0.0));
      r.terminal_obs = learner_.observe(engine_->observation_history_with_current());
      reset();
    } else {
      prepare_observation();
    }
    return r;
  }

 private:
  void prepare_observation() {
    // the attacker moves first so the defender's window includes this step
    engine_->begin_step();
    engine_->set_attack(attacker_->act(engine_->view()));
    obs_ = learner_.observe(engine_->observation_history_with_current());
  }

  const Scenario& sc_;
  const LearnedDefenderPolicy& learner_;
  const MixedStrategy& opponent_;
  uint64_t env_seed_;
  long episode_counter_ = 0;
  TripTable trips_;
  std::optional<EpisodeEngine> engine_;
  std::unique_ptr<AttackerAgent> attacker_;
  Eigen::VectorXd obs_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------

struct TrainRow {
  long timesteps = 0;
  double mean_episode_utility = 0.0;
  int episodes = 0;
  double entropy = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
};

struct TrainingLog {
  std::vector<TrainRow> rows;
};

namespace detail {

template <typename Env>
void collect_rollout(const Mlp& net, std::vector<Env>& envs,
                     std::vector<RngStream>& action_rngs, RolloutBuffer& buffer,
                     const PpoHyper& hyper, std::vector<double>& episode_accum,
                     std::vector<double>& finished_returns, unsigned threads) {
  const int n_envs = static_cast<int>(envs.size());
  std::vector<std::vector<double>> env_returns(n_envs);
  std::vector<double> bootstrap(n_envs, 0.0);

  parallel_for(
      static_cast<size_t>(n_envs),
      [&](size_t j) {
        Env& env = envs[j];
        RngStream& arng = action_rngs[j];
        for (int t = 0; t < hyper.n_steps; ++t) {
          const Eigen::VectorXd obs = env.obs();
          const Mlp::Output out = net.forward(obs);
          Eigen::VectorXd action;
          double log_prob;
          if (net.config().head == PolicyHead::kGaussian) {
            GaussianSample s = sample_gaussian(out.dist, out.log_std, arng);
            action = std::move(s.action);
            log_prob = s.log_prob;
          } else {
            const double p = sigmoid(out.dist(0));
            const double a = arng.uniform() < p ? 1.0 : 0.0;
            action = Eigen::VectorXd::Constant(1, a);
            log_prob = bernoulli_log_prob(out.dist(0), a);
          }
          const EnvStepResult sr = env.step(action);
          buffer.add(t, static_cast<int>(j), obs, std::move(action), log_prob,
                     sr.reward, out.value);
          episode_accum[j] += sr.reward;
          if (sr.done) {
            double terminal_value = 0.0;
            if (sr.timeout && hyper.time_limit_bootstrap && sr.terminal_obs)
              terminal_value = net.forward(*sr.terminal_obs).value;
            buffer.mark_done(t, static_cast<int>(j), terminal_value);
            env_returns[j].push_back(episode_accum[j]);
            episode_accum[j] = 0.0;
          }
        }
        bootstrap[j] = net.forward(env.obs()).value;
      },
      threads);

  buffer.finalize(bootstrap, hyper.gamma, hyper.gae_lambda);
  for (int j = 0; j < n_envs; ++j)
    for (double v : env_returns[j]) finished_returns.push_back(v);
}

template <typename Env>
TrainingLog train_policy(Mlp& net, std::vector<Env>& envs, const PpoHyper& hyper,
                         uint64_t seed, unsigned threads) {
  const int n_envs = static_cast<int>(envs.size());
  std::vector<RngStream> action_rngs;
  action_rngs.reserve(n_envs);
  for (auto& env : envs) action_rngs.emplace_back(env.action_seed());

  Adam opt(net.num_params(), hyper.learning_rate);
  RngStream update_rng(derive_seed(seed, 0x75706474));
  std::vector<double> episode_accum(n_envs, 0.0);

  TrainingLog log;
  long done_steps = 0;
  while (done_steps < hyper.total_timesteps) {
    RolloutBuffer buffer(hyper.n_steps, n_envs, net.config().obs_dim,
                         net.config().action_dim);
    std::vector<double> finished_returns;
    collect_rollout(net, envs, action_rngs, buffer, hyper, episode_accum,
                    finished_returns, threads);
    const PpoStats stats = ppo_update(net, buffer, hyper, opt, update_rng);
    done_steps += static_cast<long>(hyper.n_steps) * n_envs;

    TrainRow row;
    row.timesteps = done_steps;
    row.episodes = static_cast<int>(finished_returns.size());
    if (!finished_returns.empty()) {
      double s = 0.0;
      for (double v : finished_returns) s += v;
      row.mean_episode_utility = s / finished_returns.size();
    }
    row.entropy = stats.entropy;
    row.policy_loss = stats.policy_loss;
    row.value_loss = stats.value_loss;
    log.rows.push_back(row);
  }
  return log;
}

}  // namespace detail

enum class Player { kAttacker, kDefender };

/// Defender oracles train against a mixture holding at least a 20% no-attack
/// share; payoff evaluation always uses the unmodified mixture.
inline MixedStrategy with_min_no_attack_share(const MixedStrategy& mix,
                                              double min_share = 0.2) {
  double have = 0.0;
  for (const auto& [h, p] : mix.entries)
    if (h.kind == PolicyKind::kNoAttack) have += p;
  if (have >= min_share) return mix;
  MixedStrategy out;
  const double rescale = (1.0 - min_share) / std::max(1e-12, 1.0 - have);
  bool injected = false;
  for (const auto& [h, p] : mix.entries) {
    if (h.kind == PolicyKind::kNoAttack) {
      out.entries.emplace_back(h, min_share);
      injected = true;
    } else {
      out.entries.emplace_back(h, p * rescale);
    }
  }
  if (!injected) out.entries.emplace_back(PolicyHandle::no_attack(), min_share);
  return out;
}

struct BestResponseResult {
  PolicyHandle handle;
  TrainingLog log;
};

/// PPO best response against the opponent's mixed strategy. A zero budget
/// returns the freshly initialized policy.
inline BestResponseResult train_best_response(Player player,
                                              const MixedStrategy& opponent,
                                              const Scenario& scenario,
                                              const PpoHyper& hyper, uint64_t seed,
                                              unsigned threads = 0) {
  opponent.validate();
  const int ne = scenario.net.num_edges();
  BestResponseResult result;

  if (player == Player::kAttacker) {
    MlpConfig cfg;
    cfg.obs_dim = 7 * ne;
    cfg.action_dim = ne;
    cfg.head = PolicyHead::kGaussian;
    Mlp net(cfg);
    RngStream init_rng(derive_seed(seed, 0x696e6974));
    net.init_orthogonal(init_rng);
    auto policy = std::make_shared<LearnedAttackerPolicy>(
        std::move(net), attacker_obs_scale(scenario), attack_cap(scenario.net));

    std::vector<AttackerTrainEnv> envs;
    envs.reserve(hyper.n_envs);
    for (int j = 0; j < hyper.n_envs; ++j)
      envs.emplace_back(scenario, *policy, opponent, derive_seed(seed, 0x656e76, j));
    result.log = detail::train_policy(policy->mlp(), envs, hyper, seed, threads);

    result.handle.kind = PolicyKind::kLearnedAttacker;
    result.handle.attacker = policy;
    result.handle.seed = seed;
  } else {
    MlpConfig cfg;
    cfg.obs_dim = scenario.params.history * ne;
    cfg.action_dim = 1;
    cfg.head = PolicyHead::kBernoulli;
    Mlp net(cfg);
    RngStream init_rng(derive_seed(seed, 0x696e6974));
    net.init_orthogonal(init_rng);
    auto policy = std::make_shared<LearnedDefenderPolicy>(
        std::move(net), defender_obs_scale(scenario), scenario.params.history);

    const MixedStrategy training_mix = with_min_no_attack_share(opponent);
    std::vector<DefenderTrainEnv> envs;
    envs.reserve(hyper.n_envs);
    for (int j = 0; j < hyper.n_envs; ++j)
      envs.emplace_back(scenario, *policy, training_mix,
                        derive_seed(seed, 0x656e76, j));
    result.log = detail::train_policy(policy->mlp(), envs, hyper, seed, threads);

    result.handle.kind = PolicyKind::kLearnedDefender;
    result.handle.defender = policy;
    result.handle.seed = seed;
  }
  return result;
}

}  // namespace fdi
