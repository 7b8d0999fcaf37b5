#include <catch2/catch_amalgamated.hpp>

#include "fdi/policies.hpp"
#include "fdi/sim.hpp"
#include "test_util.hpp"

using Catch::Approx;

namespace {

/// Test-only attacker: consumes its own randomness but never perturbs.
/// Exercises the stream isolation between policies and the simulator.
class ZeroDrawAttacker final : public fdi::AttackerPolicy {
  struct Agent final : fdi::AttackerAgent {
    explicit Agent(uint64_t seed) : rng(seed) {}
    std::vector<double> act(const fdi::StepView& view) override {
      (void)rng.uniform();
      return std::vector<double>(view.net.num_edges(), 0.0);
    }
    fdi::RngStream rng;
  };

 public:
  std::unique_ptr<fdi::AttackerAgent> spawn(uint64_t seed) const override {
    return std::make_unique<Agent>(seed);
  }
};

fdi::RoadNetwork random_digraph(fdi::RngStream& rng, int n) {
  for (;;) {
    fdi::RoadNetwork net(n);
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v)
        if (u != v && rng.uniform() < 0.4)
          net.add_edge(u, v, testutil::attr(rng.uniform(0.1, 5.0), 10.0));
    if (net.num_edges() > 0) return net;
  }
}

bool metrics_equal(const fdi::StepMetrics& a, const fdi::StepMetrics& b) {
  return a.traveling_weight == b.traveling_weight && a.true_times == b.true_times &&
         a.observed_times == b.observed_times && a.attack_active == b.attack_active &&
         a.alarm == b.alarm && a.false_alarm == b.false_alarm;
}

}  // namespace

TEST_CASE("bpr travel time evaluates the volume-delay formula") {
  const fdi::EdgeAttr a = testutil::attr(2.0, 10.0, 0.15, 4.0);
  CHECK(fdi::bpr_travel_time(a, 0.0) == Approx(2.0));
  CHECK(fdi::bpr_travel_time(a, 10.0) == Approx(2.3));
  CHECK(fdi::bpr_travel_time(a, 20.0) == Approx(6.8));  // 2 * (1 + 0.15 * 16)
}

TEST_CASE("bpr is strictly increasing in occupancy when congestion is active") {
  fdi::RngStream rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    const fdi::EdgeAttr a = testutil::attr(rng.uniform(0.5, 10.0),
                                           rng.uniform(1.0, 50.0),
                                           rng.uniform(0.01, 1.0),
                                           rng.uniform(0.5, 6.0));
    const double n1 = rng.uniform(0.0, 100.0);
    const double n2 = n1 + rng.uniform(0.1, 50.0);
    CHECK(fdi::bpr_travel_time(a, n2) > fdi::bpr_travel_time(a, n1));
  }
}

TEST_CASE("current travel times aggregate on-edge demand") {
  fdi::RoadNetwork net(3);
  net.add_edge(0, 1, testutil::attr(2.0, 10.0, 0.15, 4.0));
  net.add_edge(1, 2, testutil::attr(3.0, 10.0, 0.15, 4.0));
  fdi::TripTable trips;
  trips.trips = {{0, 2, 4.0}, {0, 2, 6.0}};
  fdi::SimState state(trips, 1);

  SECTION("zero occupancy gives free-flow times") {
    const auto w = fdi::current_travel_times(state, net, trips);
    CHECK(w[0] == Approx(2.0));
    CHECK(w[1] == Approx(3.0));
  }

  SECTION("one heavy trip equals two lighter ones") {
    state.locations[0] = fdi::TripLocation::on_edge(0, 2);
    state.locations[1] = fdi::TripLocation::on_edge(0, 1);
    const auto w = fdi::current_travel_times(state, net, trips);
    CHECK(w[0] == Approx(2.3));  // occupancy 10 on capacity 10
    CHECK(w[1] == Approx(3.0));

    fdi::TripTable one;
    one.trips = {{0, 2, 10.0}};
    fdi::SimState s1(one, 1);
    s1.locations[0] = fdi::TripLocation::on_edge(0, 3);
    const auto w1 = fdi::current_travel_times(s1, net, one);
    CHECK(w1[0] == Approx(w[0]));
  }
}

TEST_CASE("apply_perturbation adds componentwise and rejects negatives") {
  const std::vector<double> w = {2.0, 3.0};
  CHECK(fdi::apply_perturbation(w, {0.0, 0.0}) == w);
  const auto out = fdi::apply_perturbation(w, {1.0, 0.0});
  CHECK(out == std::vector<double>{3.0, 3.0});
  for (size_t e = 0; e < w.size(); ++e) CHECK(out[e] - w[e] == Approx(e == 0 ? 1 : 0));
  CHECK_THROWS_AS(fdi::apply_perturbation(w, {-0.1, 0.0}), std::invalid_argument);
  CHECK_THROWS_AS(fdi::apply_perturbation(w, {1.0}), std::invalid_argument);
}

TEST_CASE("shortest path costs on a path graph and unreachable sentinel") {
  const fdi::RoadNetwork net = testutil::path_network({2.0, 3.0});
  const auto d = fdi::shortest_path_costs(net, {2.0, 3.0}, 2);
  CHECK(d[0] == Approx(5.0));
  CHECK(d[1] == Approx(3.0));
  CHECK(d[2] == 0.0);

  const auto back = fdi::shortest_path_costs(net, {2.0, 3.0}, 0);
  CHECK(back[0] == 0.0);
  CHECK(back[1] == fdi::kInf);
  CHECK(back[2] == fdi::kInf);
}

TEST_CASE("shortest path costs match exhaustive path enumeration") {
  fdi::RngStream rng(99);
  for (int trial = 0; trial < 30; ++trial) {
    const fdi::RoadNetwork net = random_digraph(rng, 6);
    std::vector<double> w(net.num_edges());
    for (int e = 0; e < net.num_edges(); ++e) w[e] = rng.uniform(0.1, 4.0);
    for (int dest = 0; dest < net.num_nodes(); ++dest) {
      const auto d = fdi::shortest_path_costs(net, w, dest);
      for (int v = 0; v < net.num_nodes(); ++v) {
        const double oracle = testutil::brute_force_shortest(net, w, v, dest);
        if (std::isfinite(oracle)) {
          CHECK(d[v] == Approx(oracle).margin(1e-12));
        } else {
          CHECK(d[v] == fdi::kInf);
        }
      }
    }
  }
}

TEST_CASE("route choice distribution follows the Boltzmann form") {
  const fdi::RoadNetwork net = testutil::diamond_network();
  // from node 0 toward 3: via edge 0 cost 2+2=4, via edge 2 cost 3+3=6

  SECTION("theta = 0 is uniform over reachable nexts") {
    const auto p = fdi::route_choice_distribution(net, net.free_flow_times(), 0, 3, 0.0);
    REQUIRE(p.size() == 2);
    CHECK(p[0] == Approx(0.5));
    CHECK(p[1] == Approx(0.5));
  }

  SECTION("hand-evaluated Boltzmann ratio at theta = 1, costs {0, 1} apart") {
    fdi::RoadNetwork two(3);
    two.add_edge(0, 1, testutil::attr(1.0, 10.0));
    two.add_edge(0, 2, testutil::attr(2.0, 10.0));
    two.add_edge(1, 2, testutil::attr(1.0, 10.0));
    // dest 2: C via edge0 = 1 + 1 = 2, C via edge1 = 2 + 0 = 2 -> equal
    const auto equal_p =
        fdi::route_choice_distribution(two, two.free_flow_times(), 0, 2, 1.0);
    CHECK(equal_p[0] == Approx(0.5));
    CHECK(equal_p[1] == Approx(0.5));

    // shift edge1's observed time by +1: costs {2, 3}
    const auto p = fdi::route_choice_distribution(two, {1.0, 3.0, 1.0}, 0, 2, 1.0);
    CHECK(p[0] == Approx(0.7310585786300049));
    CHECK(p[1] == Approx(0.2689414213699951));
  }

  SECTION("probabilities sum to one whenever any neighbor is reachable") {
    fdi::RngStream rng(3);
    for (int trial = 0; trial < 50; ++trial) {
      const fdi::RoadNetwork net2 = random_digraph(rng, 6);
      std::vector<double> w(net2.num_edges());
      for (int e = 0; e < net2.num_edges(); ++e) w[e] = rng.uniform(0.1, 5.0);
      for (int v = 0; v < net2.num_nodes(); ++v) {
        if (net2.out_edges(v).empty()) continue;
        for (int dest = 0; dest < net2.num_nodes(); ++dest) {
          if (dest == v) continue;
          const auto p =
              fdi::route_choice_distribution(net2, w, v, dest, rng.uniform(0.0, 3.0));
          double total = 0.0;
          bool any = false;
          for (double x : p) {
            CHECK(x >= 0.0);
            total += x;
            if (x > 0) any = true;
          }
          if (any) CHECK(total == Approx(1.0).epsilon(1e-9));
        }
      }
    }
  }

  SECTION("large theta concentrates on the argmin edge") {
    const auto p =
        fdi::route_choice_distribution(net, net.free_flow_times(), 0, 3, 100.0);
    CHECK(p[0] >= 0.99);  // cost gap 2 >> 0.1
    fdi::RngStream rng(7);
    fdi::TripTable trips;
    trips.trips = {{0, 3, 1.0}};
    int argmin_hits = 0;
    const int samples = 2000;
    for (int s = 0; s < samples; ++s) {
      fdi::SimState state(trips, rng.next_u64());
      fdi::step(state, net, trips, std::vector<double>(net.num_edges(), 0.0), false,
                100.0);
      if (state.locations[0].edge == 0) ++argmin_hits;
    }
    CHECK(argmin_hits >= static_cast<int>(0.99 * samples));
  }
}

TEST_CASE("edge dwell uses round-half-to-even clamped at one step") {
  CHECK(fdi::detail::edge_dwell(0.2) == 1);
  CHECK(fdi::detail::edge_dwell(2.0) == 2);
  CHECK(fdi::detail::edge_dwell(2.49) == 2);
  CHECK(fdi::detail::edge_dwell(2.5) == 2);
  CHECK(fdi::detail::edge_dwell(3.5) == 4);
  CHECK(fdi::detail::edge_dwell(2.51) == 3);
}

TEST_CASE("step hand simulation on the one-edge network") {
  const double s = 4.0;
  fdi::RoadNetwork net(2);
  net.add_edge(0, 1, testutil::attr(2.0, 10.0, 0.0, 4.0));
  fdi::TripTable trips;
  trips.trips = {{0, 1, s}};
  fdi::SimState state(trips, 123);
  const std::vector<double> zero(net.num_edges(), 0.0);

  double total = 0.0;
  auto m0 = fdi::step(state, net, trips, zero, false, 1.0);
  total += m0.traveling_weight;
  CHECK(m0.traveling_weight == s);
  REQUIRE(state.locations[0].kind == fdi::TripLocation::Kind::OnEdge);
  CHECK(state.locations[0].remaining == 2);

  auto m1 = fdi::step(state, net, trips, zero, false, 1.0);
  total += m1.traveling_weight;
  CHECK(state.locations[0].remaining == 1);

  auto m2 = fdi::step(state, net, trips, zero, false, 1.0);
  total += m2.traveling_weight;
  CHECK(state.locations[0].at_node_id(1));
  CHECK(state.all_finished(trips));
  CHECK(total == 3.0 * s);
}

TEST_CASE("step in the absorbing all-finished state") {
  const auto sc = testutil::tiny_scenario();
  fdi::SimState state(sc.trips, 9);
  for (size_t r = 0; r < state.locations.size(); ++r)
    state.locations[r] = fdi::TripLocation::at_node(sc.trips.trips[r].destination);
  const auto before = state.locations;
  const auto m = fdi::step(state, sc.net, sc.trips,
                           std::vector<double>(sc.net.num_edges(), 0.0), false, 1.0);
  CHECK(m.traveling_weight == 0.0);
  CHECK(state.t == 1);
  for (size_t r = 0; r < before.size(); ++r)
    CHECK(state.locations[r].node == before[r].node);
}

TEST_CASE("alarm handling: detection latches and suppresses perturbations") {
  const auto sc = testutil::tiny_scenario();
  fdi::SimState state(sc.trips, 77);
  std::vector<double> attack(sc.net.num_edges(), 0.0);
  attack[0] = 5.0;

  // true positive at the first step
  auto m0 = fdi::step(state, sc.net, sc.trips, attack, true, 1.0);
  CHECK(m0.attack_active);
  CHECK_FALSE(m0.false_alarm);
  CHECK(state.detected);
  CHECK(state.false_alarms == 0);
  CHECK(m0.observed_times[0] == Approx(m0.true_times[0] + 5.0));

  // all later steps ignore the attacker entirely
  for (int t = 0; t < 5; ++t) {
    auto m = fdi::step(state, sc.net, sc.trips, attack, t % 2 == 0, 1.0);
    CHECK_FALSE(m.attack_active);
    CHECK_FALSE(m.false_alarm);
    CHECK(m.observed_times == m.true_times);
  }
  CHECK(state.false_alarms == 0);
}

TEST_CASE("alarm without an active attack counts a false positive") {
  const auto sc = testutil::tiny_scenario();
  fdi::SimState state(sc.trips, 78);
  const std::vector<double> zero(sc.net.num_edges(), 0.0);
  auto m = fdi::step(state, sc.net, sc.trips, zero, true, 1.0);
  CHECK(m.false_alarm);
  CHECK_FALSE(state.detected);
  CHECK(state.false_alarms == 1);
  // below the activity threshold still counts as no attack
  std::vector<double> tiny(sc.net.num_edges(), 1e-4);
  m = fdi::step(state, sc.net, sc.trips, tiny, true, 1.0);
  CHECK(m.false_alarm);
  CHECK(state.false_alarms == 2);
}

TEST_CASE("run_episode contract checks") {
  const auto sc = testutil::tiny_scenario();
  const auto attacker = fdi::PolicyHandle::no_attack();
  const auto defender = fdi::PolicyHandle::no_defense();

  SECTION("horizon below one is rejected") {
    CHECK_THROWS_AS(fdi::run_episode(sc.net, sc.trips, attacker, defender, 0, 1.0, 1),
                    std::invalid_argument);
  }

  SECTION("identical seeds give identical episodes") {
    const auto a = fdi::run_episode(sc.net, sc.trips, attacker, defender, 50, 1.0, 5);
    const auto b = fdi::run_episode(sc.net, sc.trips, attacker, defender, 50, 1.0, 5);
    REQUIRE(a.per_step.size() == b.per_step.size());
    CHECK(a.total_travel_time == b.total_travel_time);
    for (size_t t = 0; t < a.per_step.size(); ++t)
      CHECK(metrics_equal(a.per_step[t], b.per_step[t]));
  }

  SECTION("traveling weight is non-increasing and bounded") {
    const auto r = fdi::run_episode(sc.net, sc.trips, attacker, defender, 50, 1.0, 6);
    const double total = sc.trips.total_demand();
    for (size_t t = 0; t + 1 < r.per_step.size(); ++t)
      CHECK(r.per_step[t].traveling_weight >= r.per_step[t + 1].traveling_weight);
    CHECK(r.total_travel_time <= 50.0 * total);
  }
}

TEST_CASE("zero perturbations reproduce the nominal trajectory bitwise") {
  const auto sc = testutil::tiny_scenario();
  const auto nominal = fdi::run_episode(sc.net, sc.trips, *fdi::PolicyHandle::no_attack().attacker,
                                        fdi::NoDefensePolicy(), 50, 1.0, 321);
  const ZeroDrawAttacker zero_attacker;
  const auto zeroed = fdi::run_episode(sc.net, sc.trips, zero_attacker,
                                       fdi::NoDefensePolicy(), 50, 1.0, 321);
  REQUIRE(nominal.per_step.size() == zeroed.per_step.size());
  CHECK(nominal.total_travel_time == zeroed.total_travel_time);
  for (size_t t = 0; t < nominal.per_step.size(); ++t) {
    CHECK(nominal.per_step[t].true_times == zeroed.per_step[t].true_times);
    CHECK(nominal.per_step[t].observed_times == zeroed.per_step[t].observed_times);
  }
}

TEST_CASE("under no attack the travel time ignores the defender") {
  const auto sc = testutil::tiny_scenario();
  const auto attacker = fdi::PolicyHandle::no_attack();
  const auto quiet =
      fdi::run_episode(sc.net, sc.trips, attacker, fdi::PolicyHandle::no_defense(),
                       50, 1.0, 88);
  const auto noisy =
      fdi::run_episode(sc.net, sc.trips, attacker, fdi::PolicyHandle::always_alarm(),
                       50, 1.0, 88);
  CHECK(quiet.total_travel_time == noisy.total_travel_time);
  CHECK(quiet.false_alarm_count == 0);
  CHECK(noisy.false_alarm_count == static_cast<int>(noisy.per_step.size()));
  CHECK_FALSE(noisy.detection_step.has_value());
}

TEST_CASE("observed times dominate true times componentwise") {
  const auto sc = testutil::tiny_scenario();
  fdi::RngStream rng(4);
  fdi::SimState state(sc.trips, 11);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> a(sc.net.num_edges());
    for (auto& v : a) v = rng.uniform(0.0, 3.0);
    const auto m = fdi::step(state, sc.net, sc.trips, a, false, 1.0);
    for (int e = 0; e < sc.net.num_edges(); ++e)
      CHECK(m.observed_times[e] >= m.true_times[e]);
  }
}

TEST_CASE("conservation of trip weight at every step") {
  // dyadic demands keep every partial sum exact in double precision
  fdi::RngStream rng(1234);
  for (int trial = 0; trial < 20; ++trial) {
    auto sc = testutil::tiny_scenario(rng.next_u64());
    for (auto& t : sc.trips.trips) t.demand = (1 + rng.uniform_int(16)) * 0.25;
    const double total = sc.trips.total_demand();
    fdi::SimState state(sc.trips, rng.next_u64());
    for (int t = 0; t < 30; ++t) {
      double traveling = 0.0, finished = 0.0;
      for (size_t r = 0; r < state.locations.size(); ++r) {
        if (state.trip_finished(sc.trips, r))
          finished += sc.trips.trips[r].demand;
        else
          traveling += sc.trips.trips[r].demand;
      }
      CHECK(traveling + finished == total);
      fdi::step(state, sc.net, sc.trips, std::vector<double>(sc.net.num_edges(), 0.0),
                false, 1.0);
    }
  }
}

TEST_CASE("nominal golden run is stable", "[golden]") {
  const auto sc = testutil::tiny_scenario();
  const auto r = fdi::run_episode(sc.net, sc.trips, fdi::PolicyHandle::no_attack(),
                                  fdi::PolicyHandle::no_defense(), 50, 1.0, 20240501);
  // frozen from the first recorded run of this simulator
  INFO("total_travel_time = " << fdi::format_double(r.total_travel_time));
  INFO("steps = " << r.per_step.size());
  CHECK(r.total_travel_time == 66.0);
  CHECK(r.per_step.size() == 9);
}
