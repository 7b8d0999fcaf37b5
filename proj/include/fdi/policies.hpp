#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fdi/sim.hpp"

namespace fdi {

enum class PolicyKind {
  kNoAttack,
  kNoDefense,
  kLearnedAttacker,
  kLearnedDefender,
  kGreedyAttack,
  kGaussianAttack,
  kBayesianDetector,
  kAlwaysAlarm,
};

inline bool is_attacker_kind(PolicyKind k) {
  return k == PolicyKind::kNoAttack || k == PolicyKind::kLearnedAttacker ||
         k == PolicyKind::kGreedyAttack || k == PolicyKind::kGaussianAttack;
}

inline const char* policy_kind_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::kNoAttack: return "no_attack";
    case PolicyKind::kNoDefense: return "no_defense";
    case PolicyKind::kLearnedAttacker: return "learned_attacker";
    case PolicyKind::kLearnedDefender: return "learned_defender";
    case PolicyKind::kGreedyAttack: return "greedy_attack";
    case PolicyKind::kGaussianAttack: return "gaussian_attack";
    case PolicyKind::kBayesianDetector: return "bayesian_detector";
    case PolicyKind::kAlwaysAlarm: return "always_alarm";
  }
  return "unknown";
}

class NoAttackPolicy final : public AttackerPolicy {
  struct Agent final : AttackerAgent {
    std::vector<double> act(const StepView& view) override {
      return std::vector<double>(view.net.num_edges(), 0.0);
    }
  };

 public:
  std::unique_ptr<AttackerAgent> spawn(uint64_t) const override {
    return std::make_unique<Agent>();
  }
};

class NoDefensePolicy final : public DefenderPolicy {
  struct Agent final : DefenderAgent {
    bool act(const std::vector<std::vector<double>>&) override { return false; }
  };

 public:
  std::unique_ptr<DefenderAgent> spawn(uint64_t) const override {
    return std::make_unique<Agent>();
  }
};

class AlwaysAlarmPolicy final : public DefenderPolicy {
  struct Agent final : DefenderAgent {
    bool act(const std::vector<std::vector<double>>&) override { return true; }
  };

 public:
  std::unique_ptr<DefenderAgent> spawn(uint64_t) const override {
    return std::make_unique<Agent>();
  }
};

/// A pure strategy: either side of the game, tagged with provenance metadata.
struct PolicyHandle {
  PolicyKind kind = PolicyKind::kNoAttack;
  std::string label;
  std::shared_ptr<const AttackerPolicy> attacker;
  std::shared_ptr<const DefenderPolicy> defender;
  int training_iteration = -1;
  uint64_t seed = 0;

  bool is_attacker() const { return is_attacker_kind(kind); }

  static PolicyHandle no_attack() {
    PolicyHandle h;
    h.kind = PolicyKind::kNoAttack;
    h.label = "no_attack";
    h.attacker = std::make_shared<NoAttackPolicy>();
    return h;
  }
  static PolicyHandle no_defense() {
    PolicyHandle h;
    h.kind = PolicyKind::kNoDefense;
    h.label = "no_defense";
    h.defender = std::make_shared<NoDefensePolicy>();
    return h;
  }
  static PolicyHandle always_alarm() {
    PolicyHandle h;
    h.kind = PolicyKind::kAlwaysAlarm;
    h.label = "always_alarm";
    h.defender = std::make_shared<AlwaysAlarmPolicy>();
    return h;
  }
};

/// Distribution over pure strategies; sampled once per episode.
struct MixedStrategy {
  std::vector<std::pair<PolicyHandle, double>> entries;

  void validate() const {
    if (entries.empty()) throw std::invalid_argument("MixedStrategy: empty");
    double sum = 0.0;
    for (const auto& [h, p] : entries) {
      if (p < 0.0) throw std::invalid_argument("MixedStrategy: negative probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("MixedStrategy: probabilities sum to " +
                                  std::to_string(sum));
  }

  static MixedStrategy pure(PolicyHandle h) {
    MixedStrategy s;
    s.entries.emplace_back(std::move(h), 1.0);
    return s;
  }

  const PolicyHandle& sample(RngStream& rng) const {
    std::vector<double> w(entries.size());
    for (size_t i = 0; i < entries.size(); ++i) w[i] = entries[i].second;
    return entries[rng.categorical(w)].first;
  }
};

inline EpisodeResult run_episode(const RoadNetwork& net, const TripTable& trips,
                                 const PolicyHandle& attacker,
                                 const PolicyHandle& defender, int horizon,
                                 double theta, uint64_t seed) {
  if (!attacker.is_attacker() || !attacker.attacker)
    throw std::invalid_argument("run_episode: first handle is not an attacker");
  if (defender.is_attacker() || !defender.defender)
    throw std::invalid_argument("run_episode: second handle is not a defender");
  return run_episode(net, trips, *attacker.attacker, *defender.defender, horizon,
                     theta, seed);
}

}  // namespace fdi
