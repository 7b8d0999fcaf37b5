// fdig: false-data-injection routing game driver.
//
// Subcommands: gen-net, train, eval, compare, plot-data.
// Exit codes: 0 success, 2 usage error, 3 missing artifact, 4 numerical failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "fdi/checkpoint.hpp"
#include "fdi/eval.hpp"
#include "fdi/game.hpp"
#include "fdi/gre.hpp"
#include "fdi/io.hpp"
#include "fdi/run_store.hpp"
#include "fdi/scenario.hpp"
#include "fdi/tntp.hpp"

namespace fs = std::filesystem;

namespace {

struct GenNetArgs {
  int rows = 3, cols = 2;
  double p = 0.6057, q = 0.3162;
  uint64_t seed = 1;
  std::string attrs;
  std::string out;
  std::string name;
  int trips = 0;  // 0: 2 * nodes
  double demand_min = 2.0, demand_max = 6.0;
  double theta = 1.0;
  int horizon = 50;
  double cf = 1.0;
  int history = 5;
  double jitter_pct = 0.05;
};

int run_gen_net(const GenNetArgs& args) {
  std::ifstream attr_in(args.attrs);
  if (!attr_in) {
    std::cerr << "gen-net: cannot open attribute source " << args.attrs << "\n";
    return 3;
  }
  const fdi::RoadNetwork attr_net = fdi::load_tntp_net(attr_in);

  fdi::GreParams gre;
  gre.rows = args.rows;
  gre.cols = args.cols;
  gre.p = args.p;
  gre.q = args.q;
  gre.seed = args.seed;

  fdi::Scenario sc;
  sc.net = fdi::generate_gre(gre, attr_net);
  sc.gre = gre;
  sc.base_seed = args.seed;
  sc.name = args.name.empty() ? (std::to_string(args.rows) + "x" +
                                 std::to_string(args.cols) + "_gre")
                              : args.name;
  sc.params.theta = args.theta;
  sc.params.horizon = args.horizon;
  sc.params.false_alarm_cost = args.cf;
  sc.params.history = args.history;
  sc.params.demand_jitter_pct = args.jitter_pct;

  // synthesize demands: a random set of distinct OD pairs
  const int n = sc.net.num_nodes();
  const int want = args.trips > 0 ? std::min(args.trips, n * (n - 1)) : 2 * n;
  std::vector<std::pair<int, int>> pairs;
  for (int o = 0; o < n; ++o)
    for (int d = 0; d < n; ++d)
      if (o != d) pairs.emplace_back(o, d);
  fdi::RngStream rng(fdi::derive_seed(args.seed, 0x7472697073));
  rng.shuffle(pairs);
  pairs.resize(want);
  std::sort(pairs.begin(), pairs.end());
  for (const auto& [o, d] : pairs)
    sc.trips.trips.push_back(
        fdi::Trip{o, d, rng.uniform(args.demand_min, args.demand_max)});

  const auto issues = fdi::validate_network(sc.net, sc.trips);
  if (!issues.empty()) {
    std::cerr << "gen-net: generated scenario failed validation:\n";
    for (const auto& s : issues) std::cerr << "  " << s << "\n";
    return 4;
  }

  fdi::save_scenario(sc, args.out);
  std::cout << "wrote scenario '" << sc.name << "' (" << sc.net.num_nodes()
            << " nodes, " << sc.net.num_edges() << " edges, " << sc.trips.size()
            << " trips) to " << args.out << "\n";
  return 0;
}

struct TrainArgs {
  std::string scenario;
  std::string out;
  int iters = 10;
  long attacker_steps = 5'000'000;
  long defender_steps = 2'000'000;
  int episodes = 50;
  int n_envs = 128;
  uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = 0;
  bool tt_only = false;
};

int run_train(const TrainArgs& args) {
  if (!fs::exists(fs::path(args.scenario) / "scenario.json")) {
    std::cerr << "train: missing artifact: "
              << (fs::path(args.scenario) / "scenario.json").string() << "\n";
    return 3;
  }
  const fdi::Scenario scenario = fdi::load_scenario(args.scenario);

  fdi::TrainConfig cfg;
  cfg.do_iterations = args.iters;
  cfg.attacker_hyper.total_timesteps = args.attacker_steps;
  cfg.defender_hyper.total_timesteps = args.defender_steps;
  cfg.attacker_hyper.n_envs = args.n_envs;
  cfg.defender_hyper.n_envs = args.n_envs;
  cfg.eval_episodes = args.episodes;
  cfg.seed = args.seed_set ? args.seed : scenario.base_seed;
  cfg.threads = args.threads;
  cfg.metric = args.tt_only ? fdi::PayoffMetric::kTravelTimeOnly
                            : fdi::PayoffMetric::kTravelTimePlusFalseAlarms;

  fs::create_directories(args.out);
  fdi::save_scenario(scenario, args.out);
  {
    std::ofstream out(fs::path(args.out) / "config.json");
    out << fdi::train_config_to_json(cfg).dump(2) << "\n";
  }

  fdi::SimulationGame game(scenario, cfg, args.out);
  fdi::DoubleOracleConfig do_cfg;
  do_cfg.iterations = cfg.do_iterations;
  const fdi::EquilibriumResult result = fdi::double_oracle_run(game, do_cfg);

  std::cout << "double oracle finished: " << result.iterations.size()
            << " iterations, final value " << fdi::format_double(result.final_value, 6)
            << " (" << result.row_ids.size() << " attacker / "
            << result.col_ids.size() << " defender strategies)\n";
  std::cout << "run directory: " << args.out << "\n";
  return 0;
}

int run_eval(const std::string& run_dir, int episodes, uint64_t seed_override,
             bool seed_set, unsigned threads) {
  const fdi::RunState state = fdi::load_run_state(run_dir);
  const uint64_t seed = seed_set ? seed_override
                                 : fdi::derive_seed(state.config.seed, 0x6576);
  const fdi::EpisodeUtilities u = fdi::collect_episode_utilities(
      state.attacker_mixture, state.defender_mixture, state.scenario, episodes, seed,
      threads);

  const fs::path out_file = fs::path(run_dir) / "eval.tsv";
  std::ofstream out(out_file);
  out << "episode\ttravel_time\tfull_cost\n";
  for (size_t i = 0; i < u.travel_time.size(); ++i)
    out << i << '\t' << fdi::format_double(u.travel_time[i]) << '\t'
        << fdi::format_double(u.full_cost[i]) << '\n';

  double mean = 0.0;
  for (double v : u.travel_time) mean += v;
  mean /= u.travel_time.size();
  std::cout << "final MSNE (iteration " << state.final_iteration << "), " << episodes
            << " episodes: mean total travel time " << fdi::format_double(mean, 6)
            << "\nwrote " << out_file.string() << "\n";
  return 0;
}

int run_compare(const std::string& run_dir, int episodes, int perms,
                uint64_t seed_override, bool seed_set, unsigned threads) {
  const fdi::RunState state = fdi::load_run_state(run_dir);
  const uint64_t seed = seed_set ? seed_override
                                 : fdi::derive_seed(state.config.seed, 0x636d70);
  fdi::BaselineConfig baselines;
  baselines.kmeans_seed = fdi::derive_seed(state.config.seed, 0x6b6d);

  const fdi::ComparisonReport report =
      fdi::compare_report(state.attacker_mixture, state.defender_mixture, baselines,
                          state.scenario, episodes, perms, seed, threads);
  {
    std::ofstream out(fs::path(run_dir) / "report.tsv");
    fdi::write_report_tsv(report, out);
  }
  {
    std::ofstream out(fs::path(run_dir) / "report.md");
    fdi::write_report_md(report, out);
  }
  std::cout << "wrote " << (fs::path(run_dir) / "report.tsv").string() << " and "
            << (fs::path(run_dir) / "report.md").string() << "\n";
  std::cout << "attack uplift vs best baseline: "
            << fdi::format_double(report.attack_uplift_pct, 4) << "%\n";
  std::cout << "defense improvement vs best baseline: "
            << fdi::format_double(report.defense_improvement_pct, 4) << "%\n";
  std::cout << "deviation from nominal under equilibrium play: "
            << fdi::format_double(report.deviation_from_nominal_pct, 4) << "%\n";
  return 0;
}

int run_plot_data(const std::string& run_dir) {
  const fs::path report_file = fs::path(run_dir) / "report.tsv";
  std::ifstream in(report_file);
  if (!in) {
    std::cerr << "plot-data: missing artifact: " << report_file.string()
              << " (run `fdig compare` first)\n";
    return 3;
  }
  const fs::path out_file = fs::path(run_dir) / "plot_data.tsv";
  std::ofstream out(out_file);
  out << "label\tmean\tse\n";
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    std::string attacker, param, defender, mean_tt, se_tt;
    std::getline(row, attacker, '\t');
    std::getline(row, param, '\t');
    std::getline(row, defender, '\t');
    std::getline(row, mean_tt, '\t');
    std::getline(row, se_tt, '\t');
    out << attacker << "_vs_" << defender << '\t' << mean_tt << '\t' << se_tt << '\n';
  }
  std::cout << "wrote " << out_file.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"False-data-injection routing game: generation, training, evaluation"};
  app.require_subcommand(1);

  GenNetArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-net", "Generate a GRE scenario");
  gen_cmd->add_option("--rows", gen.rows, "Grid rows")->required();
  gen_cmd->add_option("--cols", gen.cols, "Grid columns")->required();
  gen_cmd->add_option("--p", gen.p, "Grid-edge keep probability");
  gen_cmd->add_option("--q", gen.q, "Random-edge base probability");
  gen_cmd->add_option("--seed", gen.seed, "Generation seed");
  gen_cmd->add_option("--attrs", gen.attrs, "TNTP network used as attribute pool")
      ->required();
  gen_cmd->add_option("--out", gen.out, "Output scenario directory")->required();
  gen_cmd->add_option("--name", gen.name, "Scenario name");
  gen_cmd->add_option("--trips", gen.trips, "OD pair count (default 2x nodes)");
  gen_cmd->add_option("--demand-min", gen.demand_min, "Demand lower bound");
  gen_cmd->add_option("--demand-max", gen.demand_max, "Demand upper bound");
  gen_cmd->add_option("--theta", gen.theta, "Route-choice rationality");
  gen_cmd->add_option("--horizon", gen.horizon, "Episode horizon");
  gen_cmd->add_option("--cf", gen.cf, "False alarm cost");
  gen_cmd->add_option("--history", gen.history, "Defender history size");
  gen_cmd->add_option("--jitter-pct", gen.jitter_pct, "Demand jitter percent");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run the double-oracle training loop");
  train_cmd->add_option("--scenario", train.scenario, "Scenario directory")->required();
  train_cmd->add_option("--out", train.out, "Run directory")->required();
  train_cmd->add_option("--iters", train.iters, "Double-oracle iterations");
  train_cmd->add_option("--attacker-steps", train.attacker_steps,
                        "PPO timesteps per attacker oracle");
  train_cmd->add_option("--defender-steps", train.defender_steps,
                        "PPO timesteps per defender oracle");
  train_cmd->add_option("--episodes", train.episodes, "Episodes per payoff entry");
  train_cmd->add_option("--n-envs", train.n_envs, "Concurrent rollout environments");
  auto* seed_opt = train_cmd->add_option("--seed", train.seed,
                                         "Master seed (default: scenario seed)");
  train_cmd->add_option("--threads", train.threads, "Worker threads (0 = hardware)");
  train_cmd->add_flag("--tt-only", train.tt_only,
                      "Payoff matrix without the false-alarm cost term");

  std::string eval_run;
  int eval_episodes = 64;
  uint64_t eval_seed = 0;
  unsigned eval_threads = 0;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate the final MSNE");
  eval_cmd->add_option("--run", eval_run, "Run directory")->required();
  eval_cmd->add_option("--episodes", eval_episodes, "Evaluation episodes");
  auto* eval_seed_opt = eval_cmd->add_option("--seed", eval_seed, "Evaluation seed");
  eval_cmd->add_option("--threads", eval_threads, "Worker threads");

  std::string cmp_run;
  int cmp_episodes = 64, cmp_perms = 9999;
  uint64_t cmp_seed = 0;
  unsigned cmp_threads = 0;
  auto* cmp_cmd = app.add_subcommand("compare",
                                     "Compare equilibrium strategies to baselines");
  cmp_cmd->add_option("--run", cmp_run, "Run directory")->required();
  cmp_cmd->add_option("--episodes", cmp_episodes, "Episodes per pairing");
  cmp_cmd->add_option("--perms", cmp_perms, "Permutations per significance test");
  auto* cmp_seed_opt = cmp_cmd->add_option("--seed", cmp_seed, "Comparison seed");
  cmp_cmd->add_option("--threads", cmp_threads, "Worker threads");

  std::string plot_run;
  auto* plot_cmd = app.add_subcommand("plot-data", "Emit bar-chart data from a report");
  plot_cmd->add_option("--run", plot_run, "Run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen_cmd->parsed()) return run_gen_net(gen);
    if (train_cmd->parsed()) {
      train.seed_set = seed_opt->count() > 0;
      return run_train(train);
    }
    if (eval_cmd->parsed())
      return run_eval(eval_run, eval_episodes, eval_seed, eval_seed_opt->count() > 0,
                      eval_threads);
    if (cmp_cmd->parsed())
      return run_compare(cmp_run, cmp_episodes, cmp_perms, cmp_seed,
                         cmp_seed_opt->count() > 0, cmp_threads);
    if (plot_cmd->parsed()) return run_plot_data(plot_run);
  } catch (const fdi::MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const fdi::TntpParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 2;
}
