#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdi/common.hpp"
#include "fdi/policies.hpp"
#include "fdi/scenario.hpp"

namespace fdi {

// ---------------------------------------------------------------------------
// Exact zero-sum matrix-game solve via the classic simplex reduction.

struct ZeroSumSolution {
  std::vector<double> row_strategy;  // maximizer
  std::vector<double> col_strategy;  // minimizer
  double value = 0.0;
};

namespace detail {

/// Primal simplex for max 1'z s.t. Mz <= 1, z >= 0 with M > 0 elementwise.
/// The all-slack basis is feasible, the positive matrix keeps it bounded.
/// Returns (z, duals y). Dantzig pivoting with a Bland fallback.
inline void game_simplex(const Eigen::MatrixXd& m, std::vector<double>& z,
                         std::vector<double>& y) {
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());
  const int total = cols + rows;  // structural + slack
  constexpr double tol = 1e-11;

  Eigen::MatrixXd t(rows, total + 1);
  t.setZero();
  t.block(0, 0, rows, cols) = m;
  t.block(0, cols, rows, rows).setIdentity();
  t.col(total).setOnes();

  Eigen::VectorXd reduced = Eigen::VectorXd::Zero(total);
  reduced.head(cols).setOnes();
  std::vector<int> basis(rows);
  for (int i = 0; i < rows; ++i) basis[i] = cols + i;

  const long bland_after = 2000;
  const long hard_cap = 200000;
  for (long iter = 0;; ++iter) {
    if (iter > hard_cap)
      throw std::runtime_error("game_simplex: pivot cap exceeded");
    const bool bland = iter >= bland_after;

    int enter = -1;
    if (bland) {
      for (int j = 0; j < total; ++j)
        if (reduced(j) > tol) {
          enter = j;
          break;
        }
    } else {
      double best = tol;
      for (int j = 0; j < total; ++j)
        if (reduced(j) > best) {
          best = reduced(j);
          enter = j;
        }
    }
    if (enter < 0) break;  // optimal

    int leave = -1;
    double best_ratio = kInf;
    for (int i = 0; i < rows; ++i) {
      if (t(i, enter) > tol) {
        const double ratio = t(i, total) / t(i, enter);
        if (ratio < best_ratio - tol ||
            (ratio < best_ratio + tol && leave >= 0 && basis[i] < basis[leave])) {
          best_ratio = ratio;
          leave = i;
        }
      }
    }
    if (leave < 0)
      throw std::runtime_error("game_simplex: unbounded (matrix not positive?)");

    t.row(leave) /= t(leave, enter);
    for (int i = 0; i < rows; ++i) {
      if (i == leave) continue;
      const double f = t(i, enter);
      if (f != 0.0) t.row(i) -= f * t.row(leave);
    }
    const double rf = reduced(enter);
    reduced -= rf * t.row(leave).head(total);
    basis[leave] = enter;
  }

  z.assign(cols, 0.0);
  for (int i = 0; i < rows; ++i)
    if (basis[i] < cols) z[basis[i]] = t(i, total);
  y.assign(rows, 0.0);
  for (int i = 0; i < rows; ++i) y[i] = -reduced(cols + i);
}

}  // namespace detail

/// Maximin mixtures and value of the zero-sum game `payoff` (row player
/// maximizes the entry, column player minimizes). Solved exactly by simplex
/// after shifting all entries positive; one solve yields both strategies via
/// LP duality.
inline ZeroSumSolution solve_zero_sum_lp(const Eigen::MatrixXd& payoff) {
  if (payoff.rows() == 0 || payoff.cols() == 0)
    throw std::invalid_argument("solve_zero_sum_lp: empty matrix");
  if (!payoff.allFinite())
    throw std::invalid_argument("solve_zero_sum_lp: non-finite entries");

  const double shift = std::max(0.0, -payoff.minCoeff()) + 1.0;
  const Eigen::MatrixXd m = payoff.array() + shift;

  std::vector<double> z, y;
  detail::game_simplex(m, z, y);

  double sum_z = 0.0, sum_y = 0.0;
  for (double v : z) sum_z += v;
  for (double v : y) sum_y += v;
  if (sum_z <= 0.0 || sum_y <= 0.0)
    throw std::runtime_error("solve_zero_sum_lp: degenerate simplex output");

  ZeroSumSolution sol;
  sol.value = 1.0 / sum_z - shift;
  sol.col_strategy.resize(z.size());
  for (size_t j = 0; j < z.size(); ++j) sol.col_strategy[j] = z[j] / sum_z;
  sol.row_strategy.resize(y.size());
  for (size_t i = 0; i < y.size(); ++i)
    sol.row_strategy[i] = std::max(0.0, y[i]) / sum_y;
  // renormalize away sign-clipped round-off
  double rs = 0.0;
  for (double v : sol.row_strategy) rs += v;
  for (double& v : sol.row_strategy) v /= rs;
  return sol;
}

// ---------------------------------------------------------------------------
// Monte-Carlo payoff estimation.

struct PayoffEntry {
  double mean = 0.0;
  double std_error = 0.0;
  int episodes = 0;
  bool filled = false;
};

enum class PayoffMetric {
  kTravelTimePlusFalseAlarms,  // E[TT] + C_f * E[|F|]  (defender's full cost)
  kTravelTimeOnly,
};

/// Mean and standard error of the episode utility over independent episodes,
/// each with its own +-jitter of the demands. Deterministic per seed.
inline PayoffEntry estimate_payoff(const PolicyHandle& row, const PolicyHandle& col,
                                   const Scenario& scenario, int episodes,
                                   uint64_t seed,
                                   PayoffMetric metric = PayoffMetric::kTravelTimePlusFalseAlarms,
                                   unsigned threads = 0) {
  if (episodes < 1) throw std::invalid_argument("estimate_payoff: episodes < 1");
  std::vector<double> utilities(episodes, 0.0);
  parallel_for(
      static_cast<size_t>(episodes),
      [&](size_t ep) {
        const uint64_t ep_seed = derive_seed(seed, 0x706179, ep);
        RngStream jitter_rng(derive_seed(ep_seed, 0x6a6974));
        const TripTable trips = randomize_demands(
            scenario.trips, scenario.params.demand_jitter_pct, jitter_rng);
        const EpisodeResult r =
            run_episode(scenario.net, trips, row, col, scenario.params.horizon,
                        scenario.params.theta, ep_seed);
        double u = r.total_travel_time;
        if (metric == PayoffMetric::kTravelTimePlusFalseAlarms)
          u += scenario.params.false_alarm_cost * r.false_alarm_count;
        utilities[ep] = u;
      },
      threads);

  PayoffEntry entry;
  entry.episodes = episodes;
  entry.filled = true;
  double sum = 0.0;
  for (double u : utilities) sum += u;
  entry.mean = sum / episodes;
  if (episodes > 1) {
    double var = 0.0;
    for (double u : utilities) var += (u - entry.mean) * (u - entry.mean);
    entry.std_error = std::sqrt(var / (episodes - 1)) / std::sqrt(double(episodes));
  }
  return entry;
}

/// Utility improvement a candidate strategy offers against the opponent's
/// equilibrium mixture; the double-oracle termination statistic.
/// `candidate_payoffs[k]` must hold u(candidate, k-th opponent pure strategy).
inline double best_response_gap(const std::vector<double>& candidate_payoffs,
                                const std::vector<double>& opponent_mixture,
                                double game_value, bool candidate_is_attacker) {
  if (opponent_mixture.empty())
    throw std::invalid_argument("best_response_gap: empty opponent mixture");
  if (candidate_payoffs.size() != opponent_mixture.size())
    throw std::invalid_argument("best_response_gap: payoff/mixture size mismatch");
  double u = 0.0;
  for (size_t k = 0; k < opponent_mixture.size(); ++k)
    u += opponent_mixture[k] * candidate_payoffs[k];
  return candidate_is_attacker ? u - game_value : game_value - u;
}

// ---------------------------------------------------------------------------
// Double-oracle driver over an abstract game, so the same loop runs both the
// simulation game (PPO oracles) and enumerable matrix games (exact oracles).

class DoubleOracleGame {
 public:
  virtual ~DoubleOracleGame() = default;

  virtual int initial_row() = 0;
  virtual int initial_col() = 0;

  /// Estimated payoff of (row id, col id); caching is the implementation's
  /// concern, the driver requests each pair at most once.
  virtual PayoffEntry payoff(int row_id, int col_id) = 0;

  /// Best responses to the opponent mixture (pairs of strategy id and
  /// probability). Returning an id already in the set signals convergence.
  virtual int best_response_row(const std::vector<std::pair<int, double>>& col_mix,
                                int iteration) = 0;
  virtual int best_response_col(const std::vector<std::pair<int, double>>& row_mix,
                                int iteration) = 0;

  /// Persistence hook, called after each iteration's bookkeeping.
  virtual void on_iteration(const struct IterationRecord& record) { (void)record; }
};

struct DoubleOracleConfig {
  int iterations = 10;
  double gap_tolerance = -1.0;  // early stop when both gaps <= tol (if >= 0)
};

struct IterationRecord {
  int iteration = 0;
  double value = 0.0;
  std::vector<double> sigma_row, sigma_col;  // over the subgame at solve time
  bool trained = false;  // the last iteration solves without growing the sets
  double gap_attacker = 0.0, gap_defender = 0.0;
  int rows = 0, cols = 0;
};

struct EquilibriumResult {
  std::vector<int> row_ids, col_ids;
  Eigen::MatrixXd payoff_means;
  Eigen::MatrixXd payoff_std_errors;
  std::vector<IterationRecord> iterations;
  double final_value = 0.0;
  std::vector<double> final_sigma_row, final_sigma_col;

  double exploitability(size_t it) const {
    return iterations[it].gap_attacker + iterations[it].gap_defender;
  }
};

inline EquilibriumResult double_oracle_run(DoubleOracleGame& game,
                                           const DoubleOracleConfig& config) {
  if (config.iterations < 1)
    throw std::invalid_argument("double_oracle_run: iterations < 1");

  std::vector<int> rows{game.initial_row()};
  std::vector<int> cols{game.initial_col()};
  std::vector<std::vector<PayoffEntry>> table;  // [row][col]

  auto fill_missing = [&] {
    table.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
      table[i].resize(cols.size());
      for (size_t j = 0; j < cols.size(); ++j)
        if (!table[i][j].filled) table[i][j] = game.payoff(rows[i], cols[j]);
    }
  };
  auto means = [&] {
    Eigen::MatrixXd m(rows.size(), cols.size());
    for (size_t i = 0; i < rows.size(); ++i)
      for (size_t j = 0; j < cols.size(); ++j) m(i, j) = table[i][j].mean;
    return m;
  };

  EquilibriumResult result;
  fill_missing();

  // Iterations 1..K-1 grow the strategy sets by best responses; iteration K
  // only solves the final subgame, so K=1 degenerates to the initial pair.
  for (int it = 1; it <= config.iterations; ++it) {
    const ZeroSumSolution sol = solve_zero_sum_lp(means());

    IterationRecord rec;
    rec.iteration = it;
    rec.value = sol.value;
    rec.sigma_row = sol.row_strategy;
    rec.sigma_col = sol.col_strategy;
    rec.rows = static_cast<int>(rows.size());
    rec.cols = static_cast<int>(cols.size());

    result.final_value = sol.value;
    result.final_sigma_row = sol.row_strategy;
    result.final_sigma_col = sol.col_strategy;

    if (it == config.iterations) {
      result.iterations.push_back(rec);
      game.on_iteration(rec);
      break;
    }

    std::vector<std::pair<int, double>> row_mix, col_mix;
    for (size_t i = 0; i < rows.size(); ++i)
      row_mix.emplace_back(rows[i], sol.row_strategy[i]);
    for (size_t j = 0; j < cols.size(); ++j)
      col_mix.emplace_back(cols[j], sol.col_strategy[j]);

    const int new_row = game.best_response_row(col_mix, it);
    const int new_col = game.best_response_col(row_mix, it);

    const bool row_known = std::count(rows.begin(), rows.end(), new_row) > 0;
    const bool col_known = std::count(cols.begin(), cols.end(), new_col) > 0;
    if (!row_known) rows.push_back(new_row);
    if (!col_known) cols.push_back(new_col);
    fill_missing();

    // gaps measured with the freshly estimated cross entries
    const size_t ri = std::find(rows.begin(), rows.end(), new_row) - rows.begin();
    const size_t cj = std::find(cols.begin(), cols.end(), new_col) - cols.begin();
    std::vector<double> cand_row_payoffs(sol.col_strategy.size());
    for (size_t j = 0; j < sol.col_strategy.size(); ++j)
      cand_row_payoffs[j] = table[ri][j].mean;
    std::vector<double> cand_col_payoffs(sol.row_strategy.size());
    for (size_t i = 0; i < sol.row_strategy.size(); ++i)
      cand_col_payoffs[i] = table[i][cj].mean;

    rec.trained = true;
    rec.gap_attacker =
        best_response_gap(cand_row_payoffs, sol.col_strategy, sol.value, true);
    rec.gap_defender =
        best_response_gap(cand_col_payoffs, sol.row_strategy, sol.value, false);
    rec.rows = static_cast<int>(rows.size());
    rec.cols = static_cast<int>(cols.size());
    result.iterations.push_back(rec);
    game.on_iteration(rec);

    const bool converged = row_known && col_known;
    const bool below_tol = config.gap_tolerance >= 0.0 &&
                           rec.gap_attacker <= config.gap_tolerance &&
                           rec.gap_defender <= config.gap_tolerance;
    if (converged || below_tol) {
      // both best responses already in the sets: the current mixtures are an
      // equilibrium of the full game and the last solve is final
      break;
    }
  }

  result.row_ids = rows;
  result.col_ids = cols;
  result.payoff_means = means();
  result.payoff_std_errors.resize(rows.size(), cols.size());
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < cols.size(); ++j)
      result.payoff_std_errors(i, j) = table[i][j].std_error;
  return result;
}

}  // namespace fdi
