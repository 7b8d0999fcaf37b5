#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "fdi/gre.hpp"
#include "fdi/network.hpp"
#include "fdi/tntp.hpp"

namespace fdi {

struct ScenarioParams {
  double theta = 1.0;             // route-choice rationality
  int horizon = 50;               // episode length cap
  double false_alarm_cost = 1.0;  // C_f
  double demand_jitter_pct = 0.05;
  int history = 5;                // defender observation window |H|
};

/// Everything an experiment needs: network, demands, environment parameters
/// and the seed all derived randomness hangs off.
struct Scenario {
  std::string name;
  RoadNetwork net;
  TripTable trips;
  ScenarioParams params;
  std::optional<GreParams> gre;
  uint64_t base_seed = 0;
};

inline nlohmann::json scenario_to_json(const Scenario& sc) {
  nlohmann::json j;
  j["format"] = "fdi-scenario";
  j["version"] = 1;
  j["name"] = sc.name;
  j["base_seed"] = sc.base_seed;
  j["params"] = {{"theta", sc.params.theta},
                 {"horizon", sc.params.horizon},
                 {"false_alarm_cost", sc.params.false_alarm_cost},
                 {"demand_jitter_pct", sc.params.demand_jitter_pct},
                 {"history", sc.params.history}};
  if (sc.gre) {
    j["gre"] = {{"rows", sc.gre->rows}, {"cols", sc.gre->cols}, {"p", sc.gre->p},
                {"q", sc.gre->q},       {"seed", sc.gre->seed}};
  }
  j["network"]["num_nodes"] = sc.net.num_nodes();
  auto& edges = j["network"]["edges"] = nlohmann::json::array();
  for (const auto& e : sc.net.edges()) {
    edges.push_back({{"tail", e.tail},
                     {"head", e.head},
                     {"free_flow_time", e.attr.free_flow_time},
                     {"capacity", e.attr.capacity},
                     {"b", e.attr.b},
                     {"p", e.attr.p}});
  }
  auto& trips = j["trips"] = nlohmann::json::array();
  for (const auto& t : sc.trips.trips)
    trips.push_back({{"origin", t.origin},
                     {"destination", t.destination},
                     {"demand", t.demand}});
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "fdi-scenario")
    throw std::runtime_error("scenario_from_json: not a scenario file");
  Scenario sc;
  sc.name = j.value("name", "");
  sc.base_seed = j.value("base_seed", uint64_t{0});
  const auto& p = j.at("params");
  sc.params.theta = p.at("theta").get<double>();
  sc.params.horizon = p.at("horizon").get<int>();
  sc.params.false_alarm_cost = p.at("false_alarm_cost").get<double>();
  sc.params.demand_jitter_pct = p.at("demand_jitter_pct").get<double>();
  sc.params.history = p.at("history").get<int>();
  if (j.contains("gre")) {
    GreParams g;
    g.rows = j["gre"].at("rows").get<int>();
    g.cols = j["gre"].at("cols").get<int>();
    g.p = j["gre"].at("p").get<double>();
    g.q = j["gre"].at("q").get<double>();
    g.seed = j["gre"].at("seed").get<uint64_t>();
    sc.gre = g;
  }
  sc.net = RoadNetwork(j.at("network").at("num_nodes").get<int>());
  for (const auto& e : j.at("network").at("edges")) {
    EdgeAttr attr;
    attr.free_flow_time = e.at("free_flow_time").get<double>();
    attr.capacity = e.at("capacity").get<double>();
    attr.b = e.at("b").get<double>();
    attr.p = e.at("p").get<double>();
    sc.net.add_edge(e.at("tail").get<int>(), e.at("head").get<int>(), attr);
  }
  for (const auto& t : j.at("trips"))
    sc.trips.trips.push_back(Trip{t.at("origin").get<int>(),
                                  t.at("destination").get<int>(),
                                  t.at("demand").get<double>()});
  return sc;
}

/// Writes scenario.json plus TNTP views of the network and trips.
inline void save_scenario(const Scenario& sc, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "scenario.json");
    out << scenario_to_json(sc).dump(2) << "\n";
  }
  {
    std::ofstream out(dir / "net.tntp");
    save_tntp_net(sc.net, out);
  }
  {
    std::ofstream out(dir / "trips.tntp");
    save_tntp_trips(sc.trips, sc.net.num_nodes(), out);
  }
}

inline Scenario load_scenario(const std::filesystem::path& dir) {
  const auto file = dir / "scenario.json";
  std::ifstream in(file);
  if (!in) throw std::runtime_error("load_scenario: cannot open " + file.string());
  nlohmann::json j;
  in >> j;
  return scenario_from_json(j);
}

}  // namespace fdi
