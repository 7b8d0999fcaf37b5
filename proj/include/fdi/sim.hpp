#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <queue>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "fdi/common.hpp"
#include "fdi/network.hpp"

namespace fdi {

/// Perturbations below this are treated as "no attack" for false-positive
/// accounting; a learned Gaussian policy never outputs exact zeros.
constexpr double kEpsActive = 1e-3;

struct TripLocation {
  enum class Kind { AtNode, OnEdge };
  Kind kind = Kind::AtNode;
  int node = -1;       // valid when AtNode
  int edge = -1;       // valid when OnEdge
  int remaining = 0;   // >= 1 while OnEdge

  static TripLocation at_node(int v) { return {Kind::AtNode, v, -1, 0}; }
  static TripLocation on_edge(int e, int rem) { return {Kind::OnEdge, -1, e, rem}; }
  bool at_node_id(int v) const { return kind == Kind::AtNode && node == v; }
};

struct SimState {
  int t = 0;
  std::vector<TripLocation> locations;  // one per trip
  bool detected = false;                // latched by the first true positive
  int false_alarms = 0;
  RngStream rng;

  SimState(const TripTable& trips, uint64_t seed) : rng(seed) {
    locations.reserve(trips.size());
    for (const auto& trip : trips.trips)
      locations.push_back(TripLocation::at_node(trip.origin));
  }

  bool trip_finished(const TripTable& trips, size_t r) const {
    return locations[r].at_node_id(trips.trips[r].destination);
  }

  bool all_finished(const TripTable& trips) const {
    for (size_t r = 0; r < locations.size(); ++r)
      if (!trip_finished(trips, r)) return false;
    return true;
  }
};

struct StepMetrics {
  double traveling_weight = 0.0;      // pre-move sum of s_r over unfinished trips
  std::vector<double> true_times;     // w^t
  std::vector<double> observed_times; // w^t + a^t (post-detection: == true_times)
  bool attack_active = false;
  bool alarm = false;
  bool false_alarm = false;
};

struct EpisodeResult {
  double total_travel_time = 0.0;  // sum_t traveling_weight
  int false_alarm_count = 0;
  std::optional<int> detection_step;
  std::vector<StepMetrics> per_step;
};

/// BPR volume-delay: f * (1 + b * (n/c)^p).
inline double bpr_travel_time(const EdgeAttr& attr, double n) {
  if (n < 0.0) throw std::invalid_argument("bpr_travel_time: n < 0");
  return attr.free_flow_time *
         (1.0 + attr.b * std::pow(n / attr.capacity, attr.p));
}

/// w_e = BPR(attr_e, demand weight currently on e).
inline std::vector<double> current_travel_times(const SimState& state,
                                                const RoadNetwork& net,
                                                const TripTable& trips) {
  std::vector<double> occupancy(net.num_edges(), 0.0);
  for (size_t r = 0; r < state.locations.size(); ++r) {
    const auto& loc = state.locations[r];
    if (loc.kind == TripLocation::Kind::OnEdge)
      occupancy[loc.edge] += trips.trips[r].demand;
  }
  std::vector<double> w(net.num_edges());
  for (int e = 0; e < net.num_edges(); ++e)
    w[e] = bpr_travel_time(net.edge(e).attr, occupancy[e]);
  return w;
}

inline std::vector<double> apply_perturbation(const std::vector<double>& w,
                                              const std::vector<double>& a) {
  if (a.size() != w.size())
    throw std::invalid_argument("apply_perturbation: size mismatch");
  std::vector<double> out(w.size());
  for (size_t e = 0; e < w.size(); ++e) {
    if (a[e] < 0.0)
      throw std::invalid_argument("apply_perturbation: negative perturbation");
    out[e] = w[e] + a[e];
  }
  return out;
}

/// Cost-to-go d(v, dest) for every node v, single-destination Dijkstra on the
/// reversed graph. Unreachable nodes get +inf.
inline std::vector<double> shortest_path_costs(const RoadNetwork& net,
                                               const std::vector<double>& weights,
                                               int dest) {
  std::vector<double> dist(net.num_nodes(), kInf);
  dist[dest] = 0.0;
  using Item = std::pair<double, int>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> heap;
  heap.push({0.0, dest});
  while (!heap.empty()) {
    auto [d, u] = heap.top();
    heap.pop();
    if (d > dist[u]) continue;
    for (int e : net.in_edges(u)) {
      const int v = net.edge(e).tail;
      const double cand = d + weights[e];
      if (cand < dist[v]) {
        dist[v] = cand;
        heap.push({cand, v});
      }
    }
  }
  return dist;
}

/// Boltzmann probabilities over out_edges(at), aligned with that list.
/// All-zero output signals that no neighbor can reach dest (trip waits).
inline std::vector<double> route_choice_distribution(
    const RoadNetwork& net, const std::vector<double>& observed, int at, int dest,
    double theta, const std::vector<double>& cost_to_go) {
  const auto& out = net.out_edges(at);
  if (out.empty()) throw std::invalid_argument("route_choice_distribution: dead end");
  if (theta < 0.0) throw std::invalid_argument("route_choice_distribution: theta < 0");
  std::vector<double> cost(out.size(), kInf);
  double cmin = kInf;
  for (size_t i = 0; i < out.size(); ++i) {
    const int e = out[i];
    const double c = observed[e] + cost_to_go[net.edge(e).head];
    cost[i] = c;
    cmin = std::min(cmin, c);
  }
  std::vector<double> prob(out.size(), 0.0);
  if (!std::isfinite(cmin)) return prob;
  double total = 0.0;
  for (size_t i = 0; i < out.size(); ++i) {
    if (!std::isfinite(cost[i])) continue;
    // max-shift keeps the exponent bounded
    prob[i] = std::exp(-theta * (cost[i] - cmin));
    total += prob[i];
  }
  for (double& p : prob) p /= total;
  return prob;
}

inline std::vector<double> route_choice_distribution(const RoadNetwork& net,
                                                     const std::vector<double>& observed,
                                                     int at, int dest, double theta) {
  return route_choice_distribution(net, observed, at, dest, theta,
                                   shortest_path_costs(net, observed, dest));
}

namespace detail {

/// Round half to even, clamped below at one time step.
inline int edge_dwell(double time) {
  const double fl = std::floor(time);
  const double frac = time - fl;
  int r;
  if (frac < 0.5) {
    r = static_cast<int>(fl);
  } else if (frac > 0.5) {
    r = static_cast<int>(fl) + 1;
  } else {
    const long long f = static_cast<long long>(fl);
    r = static_cast<int>((f % 2 == 0) ? f : f + 1);
  }
  return std::max(1, r);
}

/// Moves every unfinished trip one step using the observed times. Consumes
/// state.rng once per at-node routing decision, in trip index order.
inline void advance_trips(SimState& state, const RoadNetwork& net,
                          const TripTable& trips,
                          const std::vector<double>& observed, double theta) {
  std::unordered_map<int, std::vector<double>> cost_cache;
  auto costs_for = [&](int dest) -> const std::vector<double>& {
    auto it = cost_cache.find(dest);
    if (it == cost_cache.end())
      it = cost_cache.emplace(dest, shortest_path_costs(net, observed, dest)).first;
    return it->second;
  };

  for (size_t r = 0; r < state.locations.size(); ++r) {
    auto& loc = state.locations[r];
    const int dest = trips.trips[r].destination;
    if (loc.at_node_id(dest)) continue;  // finished
    if (loc.kind == TripLocation::Kind::AtNode) {
      const auto& out = net.out_edges(loc.node);
      if (out.empty()) continue;  // dead end, wait
      auto prob = route_choice_distribution(net, observed, loc.node, dest, theta,
                                            costs_for(dest));
      double total = 0.0;
      for (double p : prob) total += p;
      if (total <= 0.0) continue;  // no neighbor reaches dest, wait
      const int e = out[state.rng.categorical(prob)];
      loc = TripLocation::on_edge(e, edge_dwell(observed[e]));
    } else {
      if (--loc.remaining == 0) loc = TripLocation::at_node(net.edge(loc.edge).head);
    }
  }
}

}  // namespace detail

/// One simulation step. The alarm decision is evaluated against this step's
/// attack activity, then trips move on the observed times; detection
/// suppresses perturbations from the next step onward.
inline StepMetrics step(SimState& state, const RoadNetwork& net, const TripTable& trips,
                        const std::vector<double>& a, bool alarm, double theta) {
  StepMetrics metrics;
  metrics.true_times = current_travel_times(state, net, trips);

  double traveling = 0.0;
  for (size_t r = 0; r < state.locations.size(); ++r)
    if (!state.trip_finished(trips, r)) traveling += trips.trips[r].demand;
  metrics.traveling_weight = traveling;

  double amax = 0.0;
  for (double v : a) {
    if (v < 0.0) throw std::invalid_argument("step: negative perturbation");
    amax = std::max(amax, v);
  }
  metrics.attack_active = !state.detected && amax > kEpsActive;

  if (state.detected) {
    metrics.observed_times = metrics.true_times;
  } else {
    metrics.observed_times = apply_perturbation(metrics.true_times, a);
  }

  metrics.alarm = alarm;
  if (alarm && !state.detected) {
    if (metrics.attack_active) {
      state.detected = true;
    } else {
      ++state.false_alarms;
      metrics.false_alarm = true;
    }
  }

  detail::advance_trips(state, net, trips, metrics.observed_times, theta);
  ++state.t;
  return metrics;
}

/// Per-episode view handed to attacker agents.
struct StepView {
  const SimState& state;
  const RoadNetwork& net;
  const TripTable& trips;
  const std::vector<double>& true_times;
};

/// Episode-scoped attacker: act() returns a nonnegative per-edge perturbation.
class AttackerAgent {
 public:
  virtual ~AttackerAgent() = default;
  virtual std::vector<double> act(const StepView& view) = 0;
};

/// Episode-scoped defender: act() sees every observed travel-time row so far
/// (oldest first, current step last) and decides whether to raise an alarm.
class DefenderAgent {
 public:
  virtual ~DefenderAgent() = default;
  virtual bool act(const std::vector<std::vector<double>>& observed_history) = 0;
};

/// Immutable attacker strategy, safely shared across concurrent episodes.
class AttackerPolicy {
 public:
  virtual ~AttackerPolicy() = default;
  virtual std::unique_ptr<AttackerAgent> spawn(uint64_t seed) const = 0;
};

class DefenderPolicy {
 public:
  virtual ~DefenderPolicy() = default;
  virtual std::unique_ptr<DefenderAgent> spawn(uint64_t seed) const = 0;
};

/// Drives one episode: attacker and defender agents are spawned from streams
/// derived from `seed`, independent of the route-choice stream, so a policy
/// that consumes randomness cannot shift the traffic trajectory.
class EpisodeEngine {
 public:
  EpisodeEngine(const RoadNetwork& net, const TripTable& trips, double theta,
                uint64_t seed)
      : net_(net), trips_(trips), theta_(theta),
        state_(trips, derive_seed(seed, /*tag=*/0x726f757465)) {}

  const SimState& state() const { return state_; }
  bool all_finished() const { return state_.all_finished(trips_); }

  const std::vector<double>& begin_step() {
    true_times_ = current_travel_times(state_, net_, trips_);
    return true_times_;
  }

  /// Applies the attacker action (forced to zero after detection); returns
  /// the observed times the defender and the vehicles will see this step.
  const std::vector<double>& set_attack(const std::vector<double>& a) {
    pending_attack_ = a;
    observed_times_ = state_.detected ? true_times_
                                      : apply_perturbation(true_times_, a);
    return observed_times_;
  }

  StepView view() const { return {state_, net_, trips_, true_times_}; }

  StepMetrics finish_step(bool alarm) {
    StepMetrics m = step(state_, net_, trips_, pending_attack_, alarm, theta_);
    history_.push_back(m.observed_times);
    return m;
  }

  /// All observed travel-time rows so far plus the current (pre-move) one.
  std::vector<std::vector<double>> observation_history_with_current() const {
    auto h = history_;
    h.push_back(observed_times_);
    return h;
  }

 private:
  const RoadNetwork& net_;
  const TripTable& trips_;
  double theta_;
  SimState state_;
  std::vector<double> true_times_;
  std::vector<double> observed_times_;
  std::vector<double> pending_attack_;
  std::vector<std::vector<double>> history_;
};

inline EpisodeResult run_episode(const RoadNetwork& net, const TripTable& trips,
                                 const AttackerPolicy& attacker,
                                 const DefenderPolicy& defender, int horizon,
                                 double theta, uint64_t seed) {
  if (horizon < 1) throw std::invalid_argument("run_episode: horizon < 1");
  EpisodeEngine engine(net, trips, theta, seed);
  auto attacker_agent = attacker.spawn(derive_seed(seed, /*tag=*/0x61746b72));
  auto defender_agent = defender.spawn(derive_seed(seed, /*tag=*/0x64656664));

  EpisodeResult result;
  for (int t = 0; t < horizon && !engine.all_finished(); ++t) {
    engine.begin_step();
    engine.set_attack(attacker_agent->act(engine.view()));
    const bool alarm = defender_agent->act(engine.observation_history_with_current());
    StepMetrics m = engine.finish_step(alarm);
    result.total_travel_time += m.traveling_weight;
    if (m.false_alarm) ++result.false_alarm_count;
    if (m.alarm && m.attack_active && !result.detection_step) result.detection_step = t;
    result.per_step.push_back(std::move(m));
  }
  return result;
}

}  // namespace fdi
