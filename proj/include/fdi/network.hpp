#pragma once

#include <cstdint>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdi/common.hpp"

namespace fdi {

/// BPR attributes of one road segment.
struct EdgeAttr {
  double free_flow_time = 1.0;  // > 0, in time steps
  double capacity = 1.0;        // > 0, in vehicles
  double b = 0.0;               // >= 0
  double p = 0.0;               // >= 0
};

struct Edge {
  int tail = -1;
  int head = -1;
  EdgeAttr attr;
};

/// Directed road network. Edge order is the canonical index for every
/// per-edge vector (travel times, perturbations, features).
class RoadNetwork {
 public:
  RoadNetwork() = default;
  explicit RoadNetwork(int num_nodes) : out_edges_(num_nodes), in_edges_(num_nodes) {}

  int add_edge(int tail, int head, const EdgeAttr& attr) {
    if (tail < 0 || tail >= num_nodes() || head < 0 || head >= num_nodes())
      throw std::invalid_argument("add_edge: node id out of range");
    if (tail == head) throw std::invalid_argument("add_edge: self-loop");
    for (int e : out_edges_[tail])
      if (edges_[e].head == head)
        throw std::invalid_argument("add_edge: duplicate directed edge");
    if (!(attr.free_flow_time > 0.0) || !(attr.capacity > 0.0) || attr.b < 0.0 ||
        attr.p < 0.0)
      throw std::invalid_argument("add_edge: attribute out of domain");
    const int id = static_cast<int>(edges_.size());
    edges_.push_back(Edge{tail, head, attr});
    out_edges_[tail].push_back(id);
    in_edges_[head].push_back(id);
    return id;
  }

  int num_nodes() const { return static_cast<int>(out_edges_.size()); }
  int num_edges() const { return static_cast<int>(edges_.size()); }
  const Edge& edge(int e) const { return edges_[e]; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& out_edges(int v) const { return out_edges_[v]; }
  const std::vector<int>& in_edges(int v) const { return in_edges_[v]; }

  int find_edge(int tail, int head) const {
    for (int e : out_edges_[tail])
      if (edges_[e].head == head) return e;
    return -1;
  }

  std::vector<double> free_flow_times() const {
    std::vector<double> f(edges_.size());
    for (size_t e = 0; e < edges_.size(); ++e) f[e] = edges_[e].attr.free_flow_time;
    return f;
  }

  /// Nodes reachable from `src` along directed edges.
  std::vector<bool> reachable_from(int src) const {
    std::vector<bool> seen(num_nodes(), false);
    std::queue<int> q;
    seen[src] = true;
    q.push(src);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int e : out_edges_[u]) {
        const int v = edges_[e].head;
        if (!seen[v]) {
          seen[v] = true;
          q.push(v);
        }
      }
    }
    return seen;
  }

  bool strongly_connected() const {
    if (num_nodes() == 0) return false;
    auto fwd = reachable_from(0);
    for (bool b : fwd)
      if (!b) return false;
    // reverse reachability from node 0
    std::vector<bool> seen(num_nodes(), false);
    std::queue<int> q;
    seen[0] = true;
    q.push(0);
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int e : in_edges_[u]) {
        const int v = edges_[e].tail;
        if (!seen[v]) {
          seen[v] = true;
          q.push(v);
        }
      }
    }
    for (bool b : seen)
      if (!b) return false;
    return true;
  }

 private:
  std::vector<Edge> edges_;
  std::vector<std::vector<int>> out_edges_;
  std::vector<std::vector<int>> in_edges_;
};

struct Trip {
  int origin = -1;
  int destination = -1;
  double demand = 0.0;  // > 0, vehicles
};

struct TripTable {
  std::vector<Trip> trips;

  size_t size() const { return trips.size(); }
  bool empty() const { return trips.empty(); }

  double total_demand() const {
    double s = 0.0;
    for (const auto& t : trips) s += t.demand;
    return s;
  }
};

/// Each demand becomes s*(1+delta), delta uniform on [-pct/100, +pct/100].
inline TripTable randomize_demands(const TripTable& trips, double pct, RngStream& rng) {
  if (pct < 0.0) throw std::invalid_argument("randomize_demands: pct < 0");
  TripTable out = trips;
  if (pct == 0.0) return out;
  const double half = pct / 100.0;
  for (auto& t : out.trips) t.demand *= 1.0 + rng.uniform(-half, half);
  return out;
}

/// Network/trip diagnostics. Empty iff all invariants and reachability hold.
inline std::vector<std::string> validate_network(const RoadNetwork& net,
                                                 const TripTable& trips) {
  std::vector<std::string> issues;
  auto note = [&](const std::string& s) { issues.push_back(s); };

  for (int e = 0; e < net.num_edges(); ++e) {
    const auto& ed = net.edge(e);
    if (!(ed.attr.free_flow_time > 0.0))
      note("edge " + std::to_string(e) + ": free_flow_time <= 0");
    if (!(ed.attr.capacity > 0.0)) note("edge " + std::to_string(e) + ": capacity <= 0");
    if (ed.attr.b < 0.0) note("edge " + std::to_string(e) + ": b < 0");
    if (ed.attr.p < 0.0) note("edge " + std::to_string(e) + ": p < 0");
  }
  for (int v = 0; v < net.num_nodes(); ++v) {
    if (net.out_edges(v).empty() && net.in_edges(v).empty())
      note("node " + std::to_string(v) + ": dangling (no incident edges)");
  }
  for (size_t i = 0; i < trips.trips.size(); ++i) {
    const auto& t = trips.trips[i];
    std::string tag = "trip " + std::to_string(i);
    if (t.origin < 0 || t.origin >= net.num_nodes() || t.destination < 0 ||
        t.destination >= net.num_nodes()) {
      note(tag + ": endpoint not a network node");
      continue;
    }
    if (t.origin == t.destination) note(tag + ": origin == destination");
    if (!(t.demand > 0.0)) note(tag + ": demand <= 0");
    if (t.origin != t.destination) {
      auto seen = net.reachable_from(t.origin);
      if (!seen[t.destination])
        note(tag + ": destination unreachable from origin");
    }
  }
  return issues;
}

}  // namespace fdi
