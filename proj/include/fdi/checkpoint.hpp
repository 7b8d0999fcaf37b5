#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "fdi/baselines.hpp"
#include "fdi/oracles.hpp"
#include "fdi/policies.hpp"

namespace fdi {

namespace detail {

inline nlohmann::json mlp_to_json(const Mlp& net) {
  const auto& cfg = net.config();
  nlohmann::json j;
  j["obs_dim"] = cfg.obs_dim;
  j["action_dim"] = cfg.action_dim;
  j["head"] = cfg.head == PolicyHead::kGaussian ? "gaussian" : "bernoulli";
  j["hidden"] = cfg.hidden;
  j["params"] = std::vector<double>(net.params.data(),
                                    net.params.data() + net.params.size());
  return j;
}

inline Mlp mlp_from_json(const nlohmann::json& j) {
  MlpConfig cfg;
  cfg.obs_dim = j.at("obs_dim").get<int>();
  cfg.action_dim = j.at("action_dim").get<int>();
  cfg.head = j.at("head").get<std::string>() == "gaussian" ? PolicyHead::kGaussian
                                                           : PolicyHead::kBernoulli;
  cfg.hidden = j.at("hidden").get<std::vector<int>>();
  Mlp net(cfg);
  const auto params = j.at("params").get<std::vector<double>>();
  if (static_cast<int>(params.size()) != net.num_params())
    throw std::runtime_error("mlp_from_json: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) net.params(i) = params[i];
  return net;
}

inline std::vector<double> to_std(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}
inline Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  Eigen::VectorXd out(v.size());
  for (size_t i = 0; i < v.size(); ++i) out(i) = v[i];
  return out;
}

}  // namespace detail

inline nlohmann::json policy_to_json(const PolicyHandle& handle) {
  nlohmann::json j;
  j["format"] = "fdi-policy";
  j["version"] = 1;
  j["kind"] = policy_kind_name(handle.kind);
  j["label"] = handle.label;
  j["training_iteration"] = handle.training_iteration;
  j["seed"] = handle.seed;

  switch (handle.kind) {
    case PolicyKind::kNoAttack:
    case PolicyKind::kNoDefense:
    case PolicyKind::kAlwaysAlarm:
      break;
    case PolicyKind::kLearnedAttacker: {
      const auto* p = dynamic_cast<const LearnedAttackerPolicy*>(handle.attacker.get());
      if (!p) throw std::runtime_error("policy_to_json: kind/type mismatch");
      j["mlp"] = detail::mlp_to_json(p->mlp());
      j["obs_scale"] = detail::to_std(p->obs_scale());
      j["a_max"] = p->a_max();
      break;
    }
    case PolicyKind::kLearnedDefender: {
      const auto* p = dynamic_cast<const LearnedDefenderPolicy*>(handle.defender.get());
      if (!p) throw std::runtime_error("policy_to_json: kind/type mismatch");
      j["mlp"] = detail::mlp_to_json(p->mlp());
      j["obs_scale"] = detail::to_std(p->obs_scale());
      j["history"] = p->history();
      break;
    }
    case PolicyKind::kGreedyAttack: {
      const auto* p = dynamic_cast<const GreedyAttackPolicy*>(handle.attacker.get());
      if (!p) throw std::runtime_error("policy_to_json: kind/type mismatch");
      j["budget"] = p->budget();
      break;
    }
    case PolicyKind::kGaussianAttack: {
      const auto* p = dynamic_cast<const GaussianAttackPolicy*>(handle.attacker.get());
      if (!p) throw std::runtime_error("policy_to_json: kind/type mismatch");
      j["b_hat"] = p->b_hat();
      j["clusters"] = {{"k", p->clusters().k},
                       {"node_cluster", p->clusters().node_cluster},
                       {"edge_cluster", p->clusters().edge_cluster}};
      break;
    }
    case PolicyKind::kBayesianDetector: {
      const auto* p =
          dynamic_cast<const BayesianDetectorPolicy*>(handle.defender.get());
      if (!p) throw std::runtime_error("policy_to_json: kind/type mismatch");
      const auto& det = p->detector();
      j["history"] = det.history;
      j["log_tau"] = det.log_tau;
      j["regularization"] = det.regularization;
      j["edge_order_hash"] = det.edge_order_hash;
      j["mean"] = detail::to_std(det.mean);
      std::vector<double> cov(det.covariance.size());
      for (long r = 0; r < det.covariance.rows(); ++r)
        for (long c = 0; c < det.covariance.cols(); ++c)
          cov[r * det.covariance.cols() + c] = det.covariance(r, c);
      j["covariance"] = cov;
      break;
    }
  }
  return j;
}

inline PolicyHandle policy_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "fdi-policy")
    throw std::runtime_error("policy_from_json: not a policy checkpoint");
  const std::string kind = j.at("kind").get<std::string>();
  PolicyHandle h;
  h.label = j.value("label", "");
  h.training_iteration = j.value("training_iteration", -1);
  h.seed = j.value("seed", uint64_t{0});

  if (kind == "no_attack") {
    h = PolicyHandle::no_attack();
  } else if (kind == "no_defense") {
    h = PolicyHandle::no_defense();
  } else if (kind == "always_alarm") {
    h = PolicyHandle::always_alarm();
  } else if (kind == "learned_attacker") {
    h.kind = PolicyKind::kLearnedAttacker;
    h.attacker = std::make_shared<LearnedAttackerPolicy>(
        detail::mlp_from_json(j.at("mlp")),
        detail::to_eigen(j.at("obs_scale").get<std::vector<double>>()),
        j.at("a_max").get<double>());
  } else if (kind == "learned_defender") {
    h.kind = PolicyKind::kLearnedDefender;
    h.defender = std::make_shared<LearnedDefenderPolicy>(
        detail::mlp_from_json(j.at("mlp")),
        detail::to_eigen(j.at("obs_scale").get<std::vector<double>>()),
        j.at("history").get<int>());
  } else if (kind == "greedy_attack") {
    h.kind = PolicyKind::kGreedyAttack;
    h.attacker = std::make_shared<GreedyAttackPolicy>(j.at("budget").get<double>());
  } else if (kind == "gaussian_attack") {
    h.kind = PolicyKind::kGaussianAttack;
    ClusterAssignment clusters;
    clusters.k = j.at("clusters").at("k").get<int>();
    clusters.node_cluster = j.at("clusters").at("node_cluster").get<std::vector<int>>();
    clusters.edge_cluster = j.at("clusters").at("edge_cluster").get<std::vector<int>>();
    h.attacker = std::make_shared<GaussianAttackPolicy>(std::move(clusters),
                                                        j.at("b_hat").get<double>());
  } else if (kind == "bayesian_detector") {
    h.kind = PolicyKind::kBayesianDetector;
    auto det = std::make_shared<BayesianDetector>();
    det->history = j.at("history").get<int>();
    det->log_tau = j.at("log_tau").get<double>();
    det->regularization = j.at("regularization").get<double>();
    det->edge_order_hash = j.at("edge_order_hash").get<uint64_t>();
    det->mean = detail::to_eigen(j.at("mean").get<std::vector<double>>());
    const auto cov = j.at("covariance").get<std::vector<double>>();
    const long dim = det->mean.size();
    if (static_cast<long>(cov.size()) != dim * dim)
      throw std::runtime_error("policy_from_json: covariance size mismatch");
    det->covariance.resize(dim, dim);
    for (long r = 0; r < dim; ++r)
      for (long c = 0; c < dim; ++c) det->covariance(r, c) = cov[r * dim + c];
    det->factorize();
    h.defender = std::make_shared<BayesianDetectorPolicy>(std::move(det));
  } else {
    throw std::runtime_error("policy_from_json: unknown kind '" + kind + "'");
  }

  h.label = j.value("label", h.label);
  h.training_iteration = j.value("training_iteration", -1);
  h.seed = j.value("seed", uint64_t{0});
  return h;
}

inline void save_policy(const PolicyHandle& handle, const std::filesystem::path& file) {
  std::filesystem::create_directories(file.parent_path());
  std::ofstream out(file);
  if (!out) throw std::runtime_error("save_policy: cannot write " + file.string());
  out << policy_to_json(handle).dump() << "\n";
}

inline PolicyHandle load_policy(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("load_policy: cannot open " + file.string());
  nlohmann::json j;
  in >> j;
  return policy_from_json(j);
}

}  // namespace fdi
