#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fdi/checkpoint.hpp"
#include "fdi/game.hpp"
#include "fdi/oracles.hpp"
#include "fdi/scenario.hpp"

namespace fdi {

struct TrainConfig {
  PpoHyper attacker_hyper;
  PpoHyper defender_hyper;
  int do_iterations = 10;
  int eval_episodes = 50;  // per payoff entry
  PayoffMetric metric = PayoffMetric::kTravelTimePlusFalseAlarms;
  uint64_t seed = 0;
  unsigned threads = 0;

  TrainConfig() {
    attacker_hyper.total_timesteps = 5'000'000;
    defender_hyper.total_timesteps = 2'000'000;
  }
};

inline nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  auto hyper = [](const PpoHyper& h) {
    return nlohmann::json{{"learning_rate", h.learning_rate},
                          {"n_steps", h.n_steps},
                          {"batch_size", h.batch_size},
                          {"n_epochs", h.n_epochs},
                          {"gamma", h.gamma},
                          {"gae_lambda", h.gae_lambda},
                          {"clip_range", h.clip_range},
                          {"ent_coef", h.ent_coef},
                          {"vf_coef", h.vf_coef},
                          {"max_grad_norm", h.max_grad_norm},
                          {"normalize_advantage", h.normalize_advantage},
                          {"total_timesteps", h.total_timesteps},
                          {"n_envs", h.n_envs},
                          {"time_limit_bootstrap", h.time_limit_bootstrap}};
  };
  return nlohmann::json{
      {"format", "fdi-train-config"},
      {"attacker_hyper", hyper(cfg.attacker_hyper)},
      {"defender_hyper", hyper(cfg.defender_hyper)},
      {"do_iterations", cfg.do_iterations},
      {"eval_episodes", cfg.eval_episodes},
      {"metric", cfg.metric == PayoffMetric::kTravelTimePlusFalseAlarms
                     ? "tt_plus_false_alarms"
                     : "tt_only"},
      {"seed", cfg.seed}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  auto hyper = [](const nlohmann::json& h) {
    PpoHyper out;
    out.learning_rate = h.at("learning_rate").get<double>();
    out.n_steps = h.at("n_steps").get<int>();
    out.batch_size = h.at("batch_size").get<int>();
    out.n_epochs = h.at("n_epochs").get<int>();
    out.gamma = h.at("gamma").get<double>();
    out.gae_lambda = h.at("gae_lambda").get<double>();
    out.clip_range = h.at("clip_range").get<double>();
    out.ent_coef = h.at("ent_coef").get<double>();
    out.vf_coef = h.at("vf_coef").get<double>();
    out.max_grad_norm = h.at("max_grad_norm").get<double>();
    out.normalize_advantage = h.at("normalize_advantage").get<bool>();
    out.total_timesteps = h.at("total_timesteps").get<long>();
    out.n_envs = h.at("n_envs").get<int>();
    out.time_limit_bootstrap = h.at("time_limit_bootstrap").get<bool>();
    return out;
  };
  TrainConfig cfg;
  cfg.attacker_hyper = hyper(j.at("attacker_hyper"));
  cfg.defender_hyper = hyper(j.at("defender_hyper"));
  cfg.do_iterations = j.at("do_iterations").get<int>();
  cfg.eval_episodes = j.at("eval_episodes").get<int>();
  cfg.metric = j.at("metric").get<std::string>() == "tt_only"
                   ? PayoffMetric::kTravelTimeOnly
                   : PayoffMetric::kTravelTimePlusFalseAlarms;
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

/// The detection game over the simulator, with every artifact persisted under
/// a run directory:
///   matrix.tsv            payoff entries (mean, SE, episode count)
///   mixtures/iter_k.tsv   subgame MSNE at each iteration
///   policies/*.ckpt       every pure strategy, indexed by side and id
///   trace.tsv             iteration, value, gaps
/// Re-running over an existing directory is a resume: payoff entries are
/// served from matrix.tsv and trained oracles reload from their checkpoints,
/// so completed work is never re-simulated.
class SimulationGame final : public DoubleOracleGame {
 public:
  SimulationGame(const Scenario& scenario, const TrainConfig& config,
                 std::filesystem::path run_dir)
      : sc_(scenario), cfg_(config), dir_(std::move(run_dir)) {
    namespace fs = std::filesystem;
    fs::create_directories(dir_ / "policies");
    fs::create_directories(dir_ / "mixtures");
    fs::create_directories(dir_ / "logs");

    attackers_.push_back(PolicyHandle::no_attack());
    attackers_.back().training_iteration = 0;
    defenders_.push_back(PolicyHandle::no_defense());
    defenders_.back().training_iteration = 0;
    save_policy(attackers_[0], dir_ / "policies" / "attacker_0.ckpt");
    save_policy(defenders_[0], dir_ / "policies" / "defender_0.ckpt");

    // resume: reload previously trained oracles in id order
    for (int k = 1;; ++k) {
      const auto file = dir_ / "policies" / ("attacker_" + std::to_string(k) + ".ckpt");
      if (!fs::exists(file)) break;
      attackers_.push_back(load_policy(file));
    }
    for (int k = 1;; ++k) {
      const auto file = dir_ / "policies" / ("defender_" + std::to_string(k) + ".ckpt");
      if (!fs::exists(file)) break;
      defenders_.push_back(load_policy(file));
    }
    load_matrix();
  }

  const std::vector<PolicyHandle>& attackers() const { return attackers_; }
  const std::vector<PolicyHandle>& defenders() const { return defenders_; }
  const std::filesystem::path& run_dir() const { return dir_; }
  int estimate_calls() const { return estimate_calls_; }

  int initial_row() override { return 0; }
  int initial_col() override { return 0; }

  PayoffEntry payoff(int row_id, int col_id) override {
    const auto key = std::make_pair(row_id, col_id);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    ++estimate_calls_;
    const uint64_t seed = derive_seed(derive_seed(cfg_.seed, 0x706179, row_id),
                                      static_cast<uint64_t>(col_id));
    const PayoffEntry entry =
        estimate_payoff(attackers_.at(row_id), defenders_.at(col_id), sc_,
                        cfg_.eval_episodes, seed, cfg_.metric, cfg_.threads);
    cache_[key] = entry;
    save_matrix();
    return entry;
  }

  int best_response_row(const std::vector<std::pair<int, double>>& col_mix,
                        int iteration) override {
    // oracle ids track iterations: id k was trained at iteration k
    if (iteration < static_cast<int>(attackers_.size())) return iteration;
    const int id = static_cast<int>(attackers_.size());
    const auto file =
        dir_ / "policies" / ("attacker_" + std::to_string(id) + ".ckpt");

    MixedStrategy opponent;
    for (const auto& [cid, p] : col_mix)
      opponent.entries.emplace_back(defenders_.at(cid), p);
    BestResponseResult br = train_best_response(
        Player::kAttacker, opponent, sc_, cfg_.attacker_hyper,
        derive_seed(cfg_.seed, 0x6174726e, iteration), cfg_.threads);
    br.handle.training_iteration = iteration;
    br.handle.label = "attacker_iter_" + std::to_string(iteration);
    attackers_.push_back(br.handle);
    save_policy(br.handle, file);
    write_training_log(br.log, dir_ / "logs" /
                                   ("attacker_" + std::to_string(id) + ".tsv"));
    return id;
  }

  int best_response_col(const std::vector<std::pair<int, double>>& row_mix,
                        int iteration) override {
    if (iteration < static_cast<int>(defenders_.size())) return iteration;
    const int id = static_cast<int>(defenders_.size());
    MixedStrategy opponent;
    for (const auto& [rid, p] : row_mix)
      opponent.entries.emplace_back(attackers_.at(rid), p);
    BestResponseResult br = train_best_response(
        Player::kDefender, opponent, sc_, cfg_.defender_hyper,
        derive_seed(cfg_.seed, 0x6474726e, iteration), cfg_.threads);
    br.handle.training_iteration = iteration;
    br.handle.label = "defender_iter_" + std::to_string(iteration);
    defenders_.push_back(br.handle);
    save_policy(br.handle,
                dir_ / "policies" / ("defender_" + std::to_string(id) + ".ckpt"));
    write_training_log(br.log, dir_ / "logs" /
                                   ("defender_" + std::to_string(id) + ".tsv"));
    return id;
  }

  void on_iteration(const IterationRecord& rec) override {
    records_.push_back(rec);
    write_trace();
    write_mixture(rec);
  }

 private:
  void load_matrix() {
    std::ifstream in(dir_ / "matrix.tsv");
    if (!in) return;
    std::string line;
    std::getline(in, line);  // header
    int row, col, episodes;
    double mean, se;
    while (in >> row >> col >> mean >> se >> episodes) {
      PayoffEntry e;
      e.mean = mean;
      e.std_error = se;
      e.episodes = episodes;
      e.filled = true;
      cache_[{row, col}] = e;
    }
  }

  void save_matrix() const {
    std::ofstream out(dir_ / "matrix.tsv");
    out << "row\tcol\tmean\tstd_error\tepisodes\n";
    for (const auto& [key, e] : cache_) {
      out << key.first << '\t' << key.second << '\t' << format_double(e.mean) << '\t'
          << format_double(e.std_error) << '\t' << e.episodes << '\n';
    }
  }

  void write_trace() const {
    std::ofstream out(dir_ / "trace.tsv");
    out << "iteration\tvalue\tgap_attacker\tgap_defender\texploitability\trows\tcols\t"
           "trained\n";
    for (const auto& r : records_) {
      out << r.iteration << '\t' << format_double(r.value) << '\t'
          << format_double(r.gap_attacker) << '\t' << format_double(r.gap_defender)
          << '\t' << format_double(r.gap_attacker + r.gap_defender) << '\t' << r.rows
          << '\t' << r.cols << '\t' << (r.trained ? 1 : 0) << '\n';
    }
  }

  void write_mixture(const IterationRecord& rec) const {
    std::ofstream out(dir_ / "mixtures" /
                      ("iter_" + std::to_string(rec.iteration) + ".tsv"));
    out << "side\tstrategy\tprobability\n";
    for (size_t i = 0; i < rec.sigma_row.size(); ++i)
      out << "attacker\t" << i << '\t' << format_double(rec.sigma_row[i]) << '\n';
    for (size_t j = 0; j < rec.sigma_col.size(); ++j)
      out << "defender\t" << j << '\t' << format_double(rec.sigma_col[j]) << '\n';
  }

  static void write_training_log(const TrainingLog& log,
                                 const std::filesystem::path& file) {
    std::ofstream out(file);
    out << "timesteps\tmean_episode_utility\tepisodes\tentropy\tpolicy_loss\t"
           "value_loss\n";
    for (const auto& r : log.rows) {
      out << r.timesteps << '\t' << format_double(r.mean_episode_utility) << '\t'
          << r.episodes << '\t' << format_double(r.entropy) << '\t'
          << format_double(r.policy_loss) << '\t' << format_double(r.value_loss)
          << '\n';
    }
  }

  const Scenario& sc_;
  TrainConfig cfg_;
  std::filesystem::path dir_;
  std::vector<PolicyHandle> attackers_, defenders_;
  std::map<std::pair<int, int>, PayoffEntry> cache_;
  std::vector<IterationRecord> records_;
  int estimate_calls_ = 0;
};

/// Builds the mixed strategies named by an equilibrium result. The sigma
/// vectors align with the leading ids (later ids, added after the final
/// solve, carry zero probability).
inline MixedStrategy mixture_from(const std::vector<PolicyHandle>& pool,
                                  const std::vector<int>& ids,
                                  const std::vector<double>& sigma) {
  MixedStrategy mix;
  for (size_t i = 0; i < sigma.size(); ++i)
    if (sigma[i] > 0.0) mix.entries.emplace_back(pool.at(ids.at(i)), sigma[i]);
  // guard against accumulated round-off
  double total = 0.0;
  for (auto& [h, p] : mix.entries) total += p;
  for (auto& [h, p] : mix.entries) p /= total;
  return mix;
}

struct MissingArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunState {
  Scenario scenario;
  TrainConfig config;
  int final_iteration = 0;
  double final_value = 0.0;
  MixedStrategy attacker_mixture, defender_mixture;
};

/// Loads a completed (or partially completed) training run: scenario, config,
/// the last recorded subgame equilibrium and the policies it references.
inline RunState load_run_state(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  auto require = [&](const fs::path& p) {
    if (!fs::exists(p))
      throw MissingArtifactError("missing artifact: " + p.string());
    return p;
  };

  RunState state;
  require(dir / "scenario.json");
  state.scenario = load_scenario(dir);
  {
    std::ifstream in(require(dir / "config.json"));
    nlohmann::json j;
    in >> j;
    state.config = train_config_from_json(j);
  }

  // last trace row names the final iteration
  {
    std::ifstream in(require(dir / "trace.tsv"));
    std::string line;
    std::getline(in, line);  // header
    int iteration = 0, rows = 0, cols = 0, trained = 0;
    double value, ga, gd, ex;
    while (in >> iteration >> value >> ga >> gd >> ex >> rows >> cols >> trained) {
      state.final_iteration = iteration;
      state.final_value = value;
    }
    if (state.final_iteration == 0)
      throw MissingArtifactError("missing artifact: trace.tsv has no iterations in " +
                                 dir.string());
  }

  const auto mix_file = require(
      dir / "mixtures" / ("iter_" + std::to_string(state.final_iteration) + ".tsv"));
  std::ifstream in(mix_file);
  std::string header, side;
  std::getline(in, header);
  int index;
  double prob;
  std::vector<std::pair<int, double>> att, def;
  while (in >> side >> index >> prob) {
    if (side == "attacker")
      att.emplace_back(index, prob);
    else
      def.emplace_back(index, prob);
  }
  for (const auto& [idx, p] : att) {
    if (p <= 0.0) continue;
    const auto ckpt =
        require(dir / "policies" / ("attacker_" + std::to_string(idx) + ".ckpt"));
    state.attacker_mixture.entries.emplace_back(load_policy(ckpt), p);
  }
  for (const auto& [idx, p] : def) {
    if (p <= 0.0) continue;
    const auto ckpt =
        require(dir / "policies" / ("defender_" + std::to_string(idx) + ".ckpt"));
    state.defender_mixture.entries.emplace_back(load_policy(ckpt), p);
  }
  state.attacker_mixture.validate();
  state.defender_mixture.validate();
  return state;
}

}  // namespace fdi
