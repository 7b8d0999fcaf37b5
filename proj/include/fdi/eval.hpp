#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdi/baselines.hpp"
#include "fdi/policies.hpp"
#include "fdi/scenario.hpp"

namespace fdi {

struct EpisodeUtilities {
  std::vector<double> travel_time;  // Fig.-2 metric
  std::vector<double> full_cost;    // TT + C_f * false alarms
};

/// Runs n independent episodes, sampling a pure strategy from each mixture
/// per episode, with per-episode demand jitter. Deterministic per seed.
inline EpisodeUtilities collect_episode_utilities(const MixedStrategy& attacker,
                                                  const MixedStrategy& defender,
                                                  const Scenario& scenario, int n,
                                                  uint64_t seed, unsigned threads = 0) {
  if (n < 1) throw std::invalid_argument("collect_episode_utilities: n < 1");
  attacker.validate();
  defender.validate();
  EpisodeUtilities out;
  out.travel_time.assign(n, 0.0);
  out.full_cost.assign(n, 0.0);
  parallel_for(
      static_cast<size_t>(n),
      [&](size_t ep) {
        // same per-episode seed layout as estimate_payoff: a pure-vs-pure
        // evaluation reproduces the payoff entry's episodes exactly
        const uint64_t ep_seed = derive_seed(seed, 0x706179, ep);
        RngStream pick_a(derive_seed(ep_seed, 0x7061));
        RngStream pick_d(derive_seed(ep_seed, 0x7064));
        const PolicyHandle& a = attacker.sample(pick_a);
        const PolicyHandle& d = defender.sample(pick_d);
        RngStream jitter(derive_seed(ep_seed, 0x6a6974));
        const TripTable trips = randomize_demands(
            scenario.trips, scenario.params.demand_jitter_pct, jitter);
        const EpisodeResult r =
            run_episode(scenario.net, trips, a, d, scenario.params.horizon,
                        scenario.params.theta, ep_seed);
        out.travel_time[ep] = r.total_travel_time;
        out.full_cost[ep] = r.total_travel_time +
                            scenario.params.false_alarm_cost * r.false_alarm_count;
      },
      threads);
  return out;
}

/// Total travel time per episode under the sampled mixtures (the reporting
/// utility convention).
inline std::vector<double> collect_episodic_utilities(const MixedStrategy& attacker,
                                                      const MixedStrategy& defender,
                                                      const Scenario& scenario, int n,
                                                      uint64_t seed,
                                                      unsigned threads = 0) {
  return collect_episode_utilities(attacker, defender, scenario, n, seed, threads)
      .travel_time;
}

enum class TestTail {
  kTwoSided,  // |mean(x) - mean(y)|
  kGreater,   // mean(x) - mean(y)
};

namespace detail {

inline double perm_stat(double sum_x, size_t nx, double total, size_t n, TestTail tail) {
  const double mean_x = sum_x / nx;
  const double mean_y = (total - sum_x) / (n - nx);
  const double d = mean_x - mean_y;
  return tail == TestTail::kTwoSided ? std::abs(d) : d;
}

}  // namespace detail

/// Permutation test of the mean difference between x and y. Exact enumeration
/// of all C(|x|+|y|, |x|) splits when that count is at most 1e5, otherwise
/// n_perm Monte-Carlo permutations with add-one smoothing (so p >= 1/(n_perm+1)).
inline double permutation_test(const std::vector<double>& x,
                               const std::vector<double>& y, int n_perm,
                               RngStream& rng, TestTail tail = TestTail::kTwoSided) {
  if (x.empty() || y.empty())
    throw std::invalid_argument("permutation_test: empty sample");
  if (n_perm < 1) throw std::invalid_argument("permutation_test: n_perm < 1");

  std::vector<double> pool(x);
  pool.insert(pool.end(), y.begin(), y.end());
  const size_t n = pool.size(), nx = x.size();
  const double total = std::accumulate(pool.begin(), pool.end(), 0.0);
  const double obs =
      detail::perm_stat(std::accumulate(x.begin(), x.end(), 0.0), nx, total, n, tail);
  const double tol = 1e-9 * std::max(1.0, std::abs(obs));

  // exact arrangement count, capped to avoid overflow
  double arrangements = 1.0;
  for (size_t i = 0; i < nx; ++i)
    arrangements = arrangements * static_cast<double>(n - i) / (i + 1);

  if (arrangements <= 1e5) {
    std::vector<size_t> idx(nx);
    std::iota(idx.begin(), idx.end(), size_t{0});
    long long hits = 0, count = 0;
    for (;;) {
      double s = 0.0;
      for (size_t i : idx) s += pool[i];
      if (detail::perm_stat(s, nx, total, n, tail) >= obs - tol) ++hits;
      ++count;
      // next combination in lexicographic order
      long long i = static_cast<long long>(nx) - 1;
      while (i >= 0 && idx[i] == n - nx + i) --i;
      if (i < 0) break;
      ++idx[i];
      for (size_t j = i + 1; j < nx; ++j) idx[j] = idx[j - 1] + 1;
    }
    return static_cast<double>(hits) / static_cast<double>(count);
  }

  long long hits = 0;
  std::vector<double> shuffled = pool;
  for (int k = 0; k < n_perm; ++k) {
    rng.shuffle(shuffled);
    double s = 0.0;
    for (size_t i = 0; i < nx; ++i) s += shuffled[i];
    if (detail::perm_stat(s, nx, total, n, tail) >= obs - tol) ++hits;
  }
  return static_cast<double>(1 + hits) / static_cast<double>(n_perm + 1);
}

// ---------------------------------------------------------------------------
// Comparison report: the strategy grid of Fig.-2 style pairings.

struct PairingRow {
  std::string attacker_label;
  std::string attacker_param;  // chosen sweep value, empty when fixed
  std::string defender_label;
  double mean_tt = 0.0, se_tt = 0.0;
  double mean_cost = 0.0, se_cost = 0.0;
  int episodes = 0;
  double p_vs_eq_attacker = -1.0;  // pairing vs (equilibrium attacker, same defender)
  double p_vs_eq_defender = -1.0;  // pairing vs (same attacker, equilibrium defender)
};

struct ComparisonReport {
  std::string scenario_name;
  int episodes = 0;
  int permutations = 0;
  double nominal_mean = 0.0, nominal_se = 0.0;
  std::vector<PairingRow> rows;
  // paper-style summary ratios, in percent
  double attack_uplift_pct = 0.0;        // eq attack vs best baseline attack
  double defense_improvement_pct = 0.0;  // eq defense vs best baseline defense
  double deviation_from_nominal_pct = 0.0;
};

struct BaselineConfig {
  std::vector<double> greedy_budget_factors = {0.25, 0.5, 1.0};  // x sum of f_e
  std::vector<double> gaussian_b_hats = {0.25, 0.5, 1.0};
  int kmeans_clusters = 4;
  uint64_t kmeans_seed = 0;
  // Bayesian detector fitting
  int detector_episodes = 48;
  int calibration_episodes = 16;
  double target_fp_quantile = 0.01;
};

namespace detail {

inline std::pair<double, double> mean_se(const std::vector<double>& v) {
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
  if (v.size() < 2) return {mean, 0.0};
  double var = 0.0;
  for (double u : v) var += (u - mean) * (u - mean);
  return {mean, std::sqrt(var / (v.size() - 1)) / std::sqrt(double(v.size()))};
}

}  // namespace detail

/// Collects nominal traces and fits + calibrates the Bayesian detector
/// baseline for a scenario.
inline PolicyHandle make_bayesian_baseline(const Scenario& sc,
                                           const BaselineConfig& cfg, uint64_t seed) {
  const PolicyHandle no_attack = PolicyHandle::no_attack();
  const PolicyHandle no_defense = PolicyHandle::no_defense();

  auto run_nominal = [&](uint64_t ep_seed) {
    RngStream jitter(derive_seed(ep_seed, 0x6a6974));
    const TripTable trips =
        randomize_demands(sc.trips, sc.params.demand_jitter_pct, jitter);
    return run_episode(sc.net, trips, no_attack, no_defense, sc.params.horizon,
                       sc.params.theta, ep_seed);
  };

  std::vector<std::vector<std::vector<double>>> traces(cfg.detector_episodes);
  parallel_for(static_cast<size_t>(cfg.detector_episodes), [&](size_t i) {
    const EpisodeResult r = run_nominal(derive_seed(seed, 0x666974, i));
    auto& trace = traces[i];
    for (const auto& m : r.per_step) trace.push_back(m.observed_times);
  });

  auto det = std::make_shared<BayesianDetector>(fit_bayesian_detector(
      traces, sc.params.history, std::nullopt, edge_order_hash(sc.net)));

  std::vector<Eigen::VectorXd> calib;
  for (int i = 0; i < cfg.calibration_episodes; ++i) {
    const EpisodeResult r = run_nominal(derive_seed(seed, 0x63616c, i));
    std::vector<std::vector<double>> rows;
    for (const auto& m : r.per_step) {
      rows.push_back(m.observed_times);
      calib.push_back(defender_observe(rows, sc.params.history));
    }
  }
  calibrate_threshold(*det, calib, cfg.target_fp_quantile);

  PolicyHandle h;
  h.kind = PolicyKind::kBayesianDetector;
  h.label = "bayesian";
  h.defender = std::make_shared<BayesianDetectorPolicy>(det);
  return h;
}

/// Evaluates the pairing grid {equilibrium, greedy, gaussian, no-attack} x
/// {equilibrium, bayesian, no-defense}; greedy/gaussian budgets are swept and
/// the strongest setting per pairing is reported.
inline ComparisonReport compare_report(const MixedStrategy& eq_attacker,
                                       const MixedStrategy& eq_defender,
                                       const BaselineConfig& baselines,
                                       const Scenario& scenario, int episodes,
                                       int permutations, uint64_t seed,
                                       unsigned threads = 0) {
  ComparisonReport report;
  report.scenario_name = scenario.name;
  report.episodes = episodes;
  report.permutations = permutations;

  const double fft_sum = [&] {
    double s = 0.0;
    for (const auto& e : scenario.net.edges()) s += e.attr.free_flow_time;
    return s;
  }();

  // attacker candidates: label -> sweep of (param string, mixture)
  struct Candidate {
    std::string label;
    std::vector<std::pair<std::string, MixedStrategy>> sweep;
  };
  std::vector<Candidate> attackers;
  attackers.push_back({"equilibrium", {{"", eq_attacker}}});
  {
    Candidate greedy{"greedy", {}};
    for (double f : baselines.greedy_budget_factors) {
      PolicyHandle h;
      h.kind = PolicyKind::kGreedyAttack;
      h.label = "greedy";
      h.attacker = std::make_shared<GreedyAttackPolicy>(f * fft_sum);
      greedy.sweep.emplace_back("B=" + format_double(f * fft_sum, 6),
                                MixedStrategy::pure(h));
    }
    attackers.push_back(std::move(greedy));
  }
  {
    Candidate gaussian{"gaussian", {}};
    const ClusterAssignment clusters = kmeans_partition(
        scenario.net, std::min(baselines.kmeans_clusters, scenario.net.num_nodes()),
        baselines.kmeans_seed);
    for (double b : baselines.gaussian_b_hats) {
      PolicyHandle h;
      h.kind = PolicyKind::kGaussianAttack;
      h.label = "gaussian";
      h.attacker = std::make_shared<GaussianAttackPolicy>(clusters, b);
      gaussian.sweep.emplace_back("Bhat=" + format_double(b, 6),
                                  MixedStrategy::pure(h));
    }
    attackers.push_back(std::move(gaussian));
  }
  attackers.push_back(
      {"no_attack", {{"", MixedStrategy::pure(PolicyHandle::no_attack())}}});

  std::vector<std::pair<std::string, MixedStrategy>> defenders;
  defenders.emplace_back("equilibrium", eq_defender);
  defenders.emplace_back(
      "bayesian", MixedStrategy::pure(make_bayesian_baseline(
                      scenario, baselines, derive_seed(seed, 0x62617965))));
  defenders.emplace_back("no_defense",
                         MixedStrategy::pure(PolicyHandle::no_defense()));

  // nominal reference
  {
    const EpisodeUtilities nominal = collect_episode_utilities(
        MixedStrategy::pure(PolicyHandle::no_attack()),
        MixedStrategy::pure(PolicyHandle::no_defense()), scenario, episodes,
        derive_seed(seed, 0x6e6f6d), threads);
    std::tie(report.nominal_mean, report.nominal_se) =
        detail::mean_se(nominal.travel_time);
  }

  // evaluate the grid, keeping the strongest sweep entry per pairing
  struct Cell {
    PairingRow row;
    std::vector<double> tt;  // samples of the chosen sweep entry
  };
  std::vector<std::vector<Cell>> grid(attackers.size(),
                                      std::vector<Cell>(defenders.size()));
  for (size_t ai = 0; ai < attackers.size(); ++ai) {
    for (size_t dj = 0; dj < defenders.size(); ++dj) {
      Cell best;
      bool have = false;
      for (const auto& [param, mix] : attackers[ai].sweep) {
        const uint64_t cell_seed =
            derive_seed(derive_seed(seed, 0x67726964, ai), dj);
        const EpisodeUtilities u = collect_episode_utilities(
            mix, defenders[dj].second, scenario, episodes, cell_seed, threads);
        Cell cell;
        cell.row.attacker_label = attackers[ai].label;
        cell.row.attacker_param = param;
        cell.row.defender_label = defenders[dj].first;
        std::tie(cell.row.mean_tt, cell.row.se_tt) = detail::mean_se(u.travel_time);
        std::tie(cell.row.mean_cost, cell.row.se_cost) = detail::mean_se(u.full_cost);
        cell.row.episodes = episodes;
        cell.tt = u.travel_time;
        if (!have || cell.row.mean_tt > best.row.mean_tt) {
          best = std::move(cell);
          have = true;
        }
      }
      grid[ai][dj] = std::move(best);
    }
  }

  // permutation tests against the corresponding equilibrium pairings
  for (size_t ai = 0; ai < attackers.size(); ++ai) {
    for (size_t dj = 0; dj < defenders.size(); ++dj) {
      auto& cell = grid[ai][dj];
      RngStream perm_rng(derive_seed(seed, 0x7065726d, ai * 16 + dj));
      if (ai != 0)
        cell.row.p_vs_eq_attacker = permutation_test(cell.tt, grid[0][dj].tt,
                                                     permutations, perm_rng);
      if (dj != 0)
        cell.row.p_vs_eq_defender = permutation_test(cell.tt, grid[ai][0].tt,
                                                     permutations, perm_rng);
      report.rows.push_back(cell.row);
    }
  }

  // summary ratios (attacks judged against the equilibrium defender,
  // defenses against the equilibrium attacker)
  const double eq_vs_eq = grid[0][0].row.mean_tt;
  double best_base_attack = -kInf;
  for (size_t ai = 1; ai + 1 < attackers.size(); ++ai)  // greedy, gaussian
    best_base_attack = std::max(best_base_attack, grid[ai][0].row.mean_tt);
  double best_base_defense = kInf;
  for (size_t dj = 1; dj < defenders.size(); ++dj)
    best_base_defense = std::min(best_base_defense, grid[0][dj].row.mean_tt);

  report.attack_uplift_pct =
      100.0 * (eq_vs_eq - best_base_attack) / std::max(1e-12, best_base_attack);
  report.defense_improvement_pct =
      100.0 * (best_base_defense - eq_vs_eq) / std::max(1e-12, best_base_defense);
  report.deviation_from_nominal_pct =
      100.0 * (eq_vs_eq - report.nominal_mean) / std::max(1e-12, report.nominal_mean);
  return report;
}

inline void write_report_tsv(const ComparisonReport& r, std::ostream& out) {
  out << "attacker\tattacker_param\tdefender\tmean_tt\tse_tt\tmean_cost\tse_cost\t"
         "episodes\tp_vs_eq_attacker\tp_vs_eq_defender\n";
  for (const auto& row : r.rows) {
    out << row.attacker_label << '\t' << row.attacker_param << '\t'
        << row.defender_label << '\t' << format_double(row.mean_tt) << '\t'
        << format_double(row.se_tt) << '\t' << format_double(row.mean_cost) << '\t'
        << format_double(row.se_cost) << '\t' << row.episodes << '\t'
        << format_double(row.p_vs_eq_attacker) << '\t'
        << format_double(row.p_vs_eq_defender) << '\n';
  }
  out << "# nominal\t" << format_double(r.nominal_mean) << '\t'
      << format_double(r.nominal_se) << '\n';
  out << "# attack_uplift_pct\t" << format_double(r.attack_uplift_pct) << '\n';
  out << "# defense_improvement_pct\t" << format_double(r.defense_improvement_pct)
      << '\n';
  out << "# deviation_from_nominal_pct\t"
      << format_double(r.deviation_from_nominal_pct) << '\n';
}

inline void write_report_md(const ComparisonReport& r, std::ostream& out) {
  out << "# Strategy comparison: " << r.scenario_name << "\n\n";
  out << "Nominal total travel time: " << format_double(r.nominal_mean, 6) << " (SE "
      << format_double(r.nominal_se, 4) << "), " << r.episodes
      << " episodes per pairing.\n\n";
  out << "| attacker | param | defender | mean TT | SE | p vs eq attack | p vs eq "
         "defense |\n";
  out << "|---|---|---|---|---|---|---|\n";
  auto fmt_p = [](double p) { return p < 0 ? std::string("-") : format_double(p, 4); };
  for (const auto& row : r.rows) {
    out << "| " << row.attacker_label << " | "
        << (row.attacker_param.empty() ? "-" : row.attacker_param) << " | "
        << row.defender_label << " | " << format_double(row.mean_tt, 6) << " | "
        << format_double(row.se_tt, 4) << " | " << fmt_p(row.p_vs_eq_attacker)
        << " | " << fmt_p(row.p_vs_eq_defender) << " |\n";
  }
  out << "\n";
  out << "- Equilibrium attack vs best baseline attack: "
      << format_double(r.attack_uplift_pct, 4) << "%\n";
  out << "- Equilibrium defense vs best baseline defense: "
      << format_double(r.defense_improvement_pct, 4) << "%\n";
  out << "- Equilibrium play deviation from nominal: "
      << format_double(r.deviation_from_nominal_pct, 4) << "%\n";
}

}  // namespace fdi
