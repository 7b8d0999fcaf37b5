#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fdi/sim.hpp"

namespace fdi {

/// Demand-flow features of the current traffic state, all computed from
/// unperturbed shortest paths on the true travel times.
struct TrafficFeatures {
  std::vector<double> path_demand;            // s_e: at-node demand whose path uses e
  std::vector<double> first_edge_demand;      // s-hat_e: at-node demand taking e next
  std::vector<double> on_edge_trips;          // m_e: unweighted trips on e
  std::vector<double> downstream_path_demand; // s-tilde_e: on-edge demand whose
                                              // remaining path uses e
  std::vector<double> on_edge_demand;         // n_e: demand weight on e
};

namespace detail {

/// Deterministic shortest-path successor edge per node toward `dest`
/// (lowest edge index wins ties); -1 where dest is unreachable.
inline std::vector<int> successor_edges(const RoadNetwork& net,
                                        const std::vector<double>& weights,
                                        const std::vector<double>& costs, int dest) {
  std::vector<int> succ(net.num_nodes(), -1);
  for (int v = 0; v < net.num_nodes(); ++v) {
    if (v == dest || !std::isfinite(costs[v])) continue;
    double best = kInf;
    for (int e : net.out_edges(v)) {
      const double c = weights[e] + costs[net.edge(e).head];
      if (c < best - 1e-15) {
        best = c;
        succ[v] = e;
      }
    }
  }
  return succ;
}

}  // namespace detail

inline TrafficFeatures traffic_features(const SimState& state, const RoadNetwork& net,
                                        const TripTable& trips) {
  const int ne = net.num_edges();
  TrafficFeatures f;
  f.path_demand.assign(ne, 0.0);
  f.first_edge_demand.assign(ne, 0.0);
  f.on_edge_trips.assign(ne, 0.0);
  f.downstream_path_demand.assign(ne, 0.0);
  f.on_edge_demand.assign(ne, 0.0);

  const std::vector<double> w = current_travel_times(state, net, trips);

  struct DestTables {
    std::vector<double> costs;
    std::vector<int> succ;
  };
  std::unordered_map<int, DestTables> cache;
  auto tables_for = [&](int dest) -> const DestTables& {
    auto it = cache.find(dest);
    if (it == cache.end()) {
      DestTables t;
      t.costs = shortest_path_costs(net, w, dest);
      t.succ = detail::successor_edges(net, w, t.costs, dest);
      it = cache.emplace(dest, std::move(t)).first;
    }
    return it->second;
  };

  auto walk_path = [&](int from, int dest, const std::vector<int>& succ,
                       double weight, std::vector<double>& into, int* first_edge) {
    int v = from;
    int guard = net.num_nodes() + 1;
    while (v != dest) {
      const int e = succ[v];
      if (e < 0) return;  // unreachable, no contribution
      if (first_edge && v == from) *first_edge = e;
      into[e] += weight;
      v = net.edge(e).head;
      if (--guard < 0) throw std::logic_error("traffic_features: path cycle");
    }
  };

  for (size_t r = 0; r < state.locations.size(); ++r) {
    const auto& loc = state.locations[r];
    const auto& trip = trips.trips[r];
    if (state.trip_finished(trips, r)) continue;
    if (loc.kind == TripLocation::Kind::AtNode) {
      const auto& t = tables_for(trip.destination);
      int first = -1;
      walk_path(loc.node, trip.destination, t.succ, trip.demand, f.path_demand,
                &first);
      if (first >= 0) f.first_edge_demand[first] += trip.demand;
    } else {
      f.on_edge_trips[loc.edge] += 1.0;
      f.on_edge_demand[loc.edge] += trip.demand;
      const auto& t = tables_for(trip.destination);
      walk_path(net.edge(loc.edge).head, trip.destination, t.succ, trip.demand,
                f.downstream_path_demand, nullptr);
    }
  }
  return f;
}

/// Attacker observation: per-edge 7-tuple (s, s-hat, m, s-tilde, n, c, f)
/// flattened in edge order; length 7*|E|.
inline Eigen::VectorXd attacker_observe(const SimState& state, const RoadNetwork& net,
                                        const TripTable& trips) {
  const TrafficFeatures f = traffic_features(state, net, trips);
  const int ne = net.num_edges();
  Eigen::VectorXd obs(7 * ne);
  for (int e = 0; e < ne; ++e) {
    obs(7 * e + 0) = f.path_demand[e];
    obs(7 * e + 1) = f.first_edge_demand[e];
    obs(7 * e + 2) = f.on_edge_trips[e];
    obs(7 * e + 3) = f.downstream_path_demand[e];
    obs(7 * e + 4) = f.on_edge_demand[e];
    obs(7 * e + 5) = net.edge(e).attr.capacity;
    obs(7 * e + 6) = net.edge(e).attr.free_flow_time;
  }
  return obs;
}

/// Defender observation: the last `history` observed travel-time rows
/// concatenated oldest first, zero-padded before the episode start.
inline Eigen::VectorXd defender_observe(
    const std::vector<std::vector<double>>& observed_rows, int history) {
  if (history < 1) throw std::invalid_argument("defender_observe: history < 1");
  if (observed_rows.empty())
    throw std::invalid_argument("defender_observe: no observations");
  const int ne = static_cast<int>(observed_rows.back().size());
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(static_cast<long>(history) * ne);
  const int have = static_cast<int>(observed_rows.size());
  const int take = std::min(history, have);
  for (int k = 0; k < take; ++k) {
    // slot (history-1) holds the current row, earlier slots older rows
    const auto& row = observed_rows[have - take + k];
    if (static_cast<int>(row.size()) != ne)
      throw std::invalid_argument("defender_observe: ragged observation rows");
    for (int e = 0; e < ne; ++e) obs((history - take + k) * ne + e) = row[e];
  }
  return obs;
}

}  // namespace fdi
