#pragma once

// Shared fixtures and independent oracles for the test suites. Everything in
// here is deliberately brute-force: these implementations cross-check the
// library, so they must not share code paths with it.

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "fdi/network.hpp"
#include "fdi/scenario.hpp"

namespace testutil {

inline fdi::EdgeAttr attr(double f, double c, double b = 0.15, double p = 4.0) {
  fdi::EdgeAttr a;
  a.free_flow_time = f;
  a.capacity = c;
  a.b = b;
  a.p = p;
  return a;
}

/// A -> B -> C path graph with the given edge times (b=0: constant times).
inline fdi::RoadNetwork path_network(const std::vector<double>& times,
                                     double capacity = 10.0, double b = 0.0,
                                     double p = 4.0) {
  fdi::RoadNetwork net(static_cast<int>(times.size()) + 1);
  for (size_t i = 0; i < times.size(); ++i)
    net.add_edge(static_cast<int>(i), static_cast<int>(i) + 1,
                 attr(times[i], capacity, b, p));
  return net;
}

/// Strongly connected 4-node test net with two competing routes 0 -> 3.
inline fdi::RoadNetwork diamond_network() {
  fdi::RoadNetwork net(4);
  net.add_edge(0, 1, attr(2, 10));   // e0
  net.add_edge(1, 3, attr(2, 10));   // e1
  net.add_edge(0, 2, attr(3, 10));   // e2
  net.add_edge(2, 3, attr(3, 10));   // e3
  net.add_edge(3, 0, attr(4, 10));   // e4 closes the cycle
  net.add_edge(1, 2, attr(1, 10));   // e5 cross edge
  return net;
}

/// Exhaustive simple-path minimum cost, the oracle for Dijkstra.
inline double brute_force_shortest(const fdi::RoadNetwork& net,
                                   const std::vector<double>& weights, int from,
                                   int to) {
  if (from == to) return 0.0;
  double best = fdi::kInf;
  std::vector<bool> visited(net.num_nodes(), false);
  std::function<void(int, double)> dfs = [&](int v, double cost) {
    if (v == to) {
      best = std::min(best, cost);
      return;
    }
    visited[v] = true;
    for (int e : net.out_edges(v)) {
      const int u = net.edge(e).head;
      if (!visited[u]) dfs(u, cost + weights[e]);
    }
    visited[v] = false;
  };
  dfs(from, 0.0);
  return best;
}

/// Support-enumeration solver for zero-sum matrix games (row maximizes).
/// Every matrix game has a square-support basic solution, so enumerating
/// equal-size supports and checking the equilibrium conditions is complete.
inline std::optional<double> support_enumeration_value(const Eigen::MatrixXd& m,
                                                       double tol = 1e-9) {
  const int rows = static_cast<int>(m.rows());
  const int cols = static_cast<int>(m.cols());

  std::vector<std::vector<int>> row_supports, col_supports;
  for (int mask = 1; mask < (1 << rows); ++mask) {
    std::vector<int> s;
    for (int i = 0; i < rows; ++i)
      if (mask & (1 << i)) s.push_back(i);
    row_supports.push_back(s);
  }
  for (int mask = 1; mask < (1 << cols); ++mask) {
    std::vector<int> s;
    for (int j = 0; j < cols; ++j)
      if (mask & (1 << j)) s.push_back(j);
    col_supports.push_back(s);
  }

  for (const auto& sr : row_supports) {
    for (const auto& sc : col_supports) {
      if (sr.size() != sc.size()) continue;
      const int k = static_cast<int>(sr.size());
      // unknowns [x(0..k-1), v]: payoff equal to v on the column support,
      // probabilities summing to one
      Eigen::MatrixXd a = Eigen::MatrixXd::Zero(k + 1, k + 1);
      Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 1);
      for (int j = 0; j < k; ++j) {
        for (int i = 0; i < k; ++i) a(j, i) = m(sr[i], sc[j]);
        a(j, k) = -1.0;
      }
      for (int i = 0; i < k; ++i) a(k, i) = 1.0;
      rhs(k) = 1.0;
      Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
      if (!lu.isInvertible()) continue;
      const Eigen::VectorXd xv = lu.solve(rhs);

      // column player's symmetric system
      Eigen::MatrixXd at = Eigen::MatrixXd::Zero(k + 1, k + 1);
      Eigen::VectorXd rhs2 = Eigen::VectorXd::Zero(k + 1);
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) at(i, j) = m(sr[i], sc[j]);
        at(i, k) = -1.0;
      }
      for (int j = 0; j < k; ++j) at(k, j) = 1.0;
      rhs2(k) = 1.0;
      Eigen::FullPivLU<Eigen::MatrixXd> lu2(at);
      if (!lu2.isInvertible()) continue;
      const Eigen::VectorXd yv = lu2.solve(rhs2);

      const double v = xv(k);
      if (std::abs(yv(k) - v) > 1e-6) continue;
      bool ok = true;
      for (int i = 0; i < k && ok; ++i)
        if (xv(i) < -tol || yv(i) < -tol) ok = false;
      if (!ok) continue;
      // no profitable deviation outside the supports
      for (int j = 0; j < cols && ok; ++j) {
        double u = 0.0;
        for (int i = 0; i < k; ++i) u += xv(i) * m(sr[i], j);
        if (u < v - 1e-7) ok = false;
      }
      for (int i = 0; i < rows && ok; ++i) {
        double u = 0.0;
        for (int j = 0; j < k; ++j) u += yv(j) * m(i, sc[j]);
        if (u > v + 1e-7) ok = false;
      }
      if (ok) return v;
    }
  }
  return std::nullopt;
}

/// O(T^2) generalized-advantage oracle, the literal double sum.
inline std::vector<double> gae_double_sum(const std::vector<double>& rewards,
                                          const std::vector<double>& values,
                                          const std::vector<uint8_t>& dones,
                                          double bootstrap, double gamma,
                                          double lambda) {
  const size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    double acc = 0.0, w = 1.0;
    for (size_t k = t; k < n; ++k) {
      const double next_v =
          dones[k] ? 0.0 : (k + 1 < n ? values[k + 1] : bootstrap);
      const double delta = rewards[k] + gamma * next_v - values[k];
      acc += w * delta;
      if (dones[k]) break;
      w *= gamma * lambda;
    }
    adv[t] = acc;
  }
  return adv;
}

/// Trapezoid quadrature of exp(log_pdf) over [lo, hi].
inline double quadrature(const std::function<double(double)>& log_pdf, double lo,
                         double hi, int points = 20001) {
  const double h = (hi - lo) / (points - 1);
  double sum = 0.0;
  for (int i = 0; i < points; ++i) {
    const double x = lo + i * h;
    const double f = std::exp(log_pdf(x));
    sum += (i == 0 || i + 1 == points) ? 0.5 * f : f;
  }
  return sum * h;
}

/// Central finite differences over every parameter; returns the max
/// relative error against the analytic gradient.
inline double max_fd_error(Eigen::VectorXd& params,
                           const std::function<double()>& loss,
                           const Eigen::VectorXd& analytic, double h = 1e-5) {
  double worst = 0.0;
  for (int i = 0; i < params.size(); ++i) {
    const double save = params(i);
    params(i) = save + h;
    const double up = loss();
    params(i) = save - h;
    const double down = loss();
    params(i) = save;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({1e-3, std::abs(fd), std::abs(analytic(i))});
    worst = std::max(worst, std::abs(fd - analytic(i)) / denom);
  }
  return worst;
}

/// Small strongly connected scenario used across the simulation tests.
inline fdi::Scenario tiny_scenario(uint64_t seed = 7) {
  fdi::Scenario sc;
  sc.name = "tiny";
  sc.net = diamond_network();
  sc.trips.trips = {{0, 3, 4.0}, {1, 3, 2.0}, {2, 0, 3.0}};
  sc.params.theta = 1.0;
  sc.params.horizon = 50;
  sc.params.false_alarm_cost = 1.0;
  sc.params.demand_jitter_pct = 0.05;
  sc.params.history = 5;
  sc.base_seed = seed;
  return sc;
}

}  // namespace testutil
