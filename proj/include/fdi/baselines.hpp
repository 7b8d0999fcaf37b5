#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdi/features.hpp"
#include "fdi/policies.hpp"

namespace fdi {

// ---------------------------------------------------------------------------
// Greedy budget-proportional attack.

/// Splits budget B across edges proportionally to the at-node demand whose
/// unperturbed shortest paths use each edge. Zero traffic yields zero attack.
inline std::vector<double> greedy_attack(const SimState& state, const RoadNetwork& net,
                                         const TripTable& trips, double budget) {
  if (budget <= 0.0) throw std::invalid_argument("greedy_attack: budget <= 0");
  const TrafficFeatures f = traffic_features(state, net, trips);
  double total = 0.0;
  for (double s : f.path_demand) total += s;
  std::vector<double> a(net.num_edges(), 0.0);
  if (total <= 0.0) return a;
  for (int e = 0; e < net.num_edges(); ++e)
    a[e] = budget * f.path_demand[e] / total;
  return a;
}

inline double default_greedy_budget(const RoadNetwork& net) {
  double sum = 0.0;
  for (const auto& e : net.edges()) sum += e.attr.free_flow_time;
  return 0.5 * sum;
}

class GreedyAttackPolicy final : public AttackerPolicy {
  struct Agent final : AttackerAgent {
    explicit Agent(double b) : budget(b) {}
    std::vector<double> act(const StepView& view) override {
      return greedy_attack(view.state, view.net, view.trips, budget);
    }
    double budget;
  };

 public:
  explicit GreedyAttackPolicy(double budget) : budget_(budget) {
    if (budget <= 0.0) throw std::invalid_argument("GreedyAttackPolicy: budget <= 0");
  }
  std::unique_ptr<AttackerAgent> spawn(uint64_t) const override {
    return std::make_unique<Agent>(budget_);
  }
  double budget() const { return budget_; }

 private:
  double budget_;
};

// ---------------------------------------------------------------------------
// k-means graph partition on the free-flow shortest-path embedding.

struct ClusterAssignment {
  int k = 0;
  std::vector<int> node_cluster;  // per node, 0..k-1
  std::vector<int> edge_cluster;  // per edge; -1 when endpoints differ

  std::vector<int> clusters_with_edges() const {
    std::vector<int> out;
    for (int c = 0; c < k; ++c)
      if (std::count(edge_cluster.begin(), edge_cluster.end(), c) > 0)
        out.push_back(c);
    return out;
  }
};

namespace detail {

inline double sq_dist(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).squaredNorm();
}

/// One Lloyd run from a k-means++ seeding; returns inertia. When given,
/// `inertia_trace` records the cost after each assignment pass.
inline double lloyd_once(const std::vector<Eigen::VectorXd>& points, int k,
                         RngStream& rng, std::vector<int>& assign,
                         std::vector<double>* inertia_trace = nullptr) {
  const int n = static_cast<int>(points.size());
  std::vector<Eigen::VectorXd> centers;
  centers.reserve(k);
  centers.push_back(points[rng.uniform_int(n)]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = kInf;
      for (const auto& c : centers) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      // remaining points coincide with existing centers
      centers.push_back(points[rng.uniform_int(n)]);
      continue;
    }
    centers.push_back(points[rng.categorical(d2)]);
  }

  assign.assign(n, 0);
  double inertia = 0.0;
  for (int iter = 0; iter < 200; ++iter) {
    bool changed = false;
    inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = kInf;
      int arg = 0;
      for (int c = 0; c < k; ++c) {
        const double d = sq_dist(points[i], centers[c]);
        if (d < best) {
          best = d;
          arg = c;
        }
      }
      if (assign[i] != arg) {
        assign[i] = arg;
        changed = true;
      }
      inertia += best;
    }
    if (inertia_trace) inertia_trace->push_back(inertia);
    std::vector<Eigen::VectorXd> sums(k, Eigen::VectorXd::Zero(points[0].size()));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      sums[assign[i]] += points[i];
      ++counts[assign[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers[c] = sums[c] / counts[c];
      } else {
        // reseed an empty cluster at the point farthest from its own center
        int far = 0;
        double fd = -1.0;
        for (int i = 0; i < n; ++i) {
          const double d = sq_dist(points[i], centers[assign[i]]);
          if (d > fd) {
            fd = d;
            far = i;
          }
        }
        centers[c] = points[far];
        changed = true;
      }
    }
    if (!changed) break;
  }
  return inertia;
}

}  // namespace detail

/// Embeds each node as its row of free-flow shortest-path distances to every
/// node and runs Lloyd's k-means (k-means++ seeding, 50 restarts).
/// Deterministic for a fixed seed. Edges whose endpoints share a cluster
/// inherit it; boundary edges get -1.
inline ClusterAssignment kmeans_partition(const RoadNetwork& net, int k, uint64_t seed,
                                          int restarts = 50) {
  const int n = net.num_nodes();
  if (k < 1 || k > n) throw std::invalid_argument("kmeans_partition: k outside 1..|V|");

  const std::vector<double> fft = net.free_flow_times();
  Eigen::MatrixXd dist(n, n);  // dist(v, d) = free-flow cost v -> d
  for (int d = 0; d < n; ++d) {
    const auto col = shortest_path_costs(net, fft, d);
    for (int v = 0; v < n; ++v) dist(v, d) = col[v];
  }
  double max_finite = 0.0;
  for (int v = 0; v < n; ++v)
    for (int d = 0; d < n; ++d)
      if (std::isfinite(dist(v, d))) max_finite = std::max(max_finite, dist(v, d));
  const double far = 2.0 * std::max(1.0, max_finite);
  for (int v = 0; v < n; ++v)
    for (int d = 0; d < n; ++d)
      if (!std::isfinite(dist(v, d))) dist(v, d) = far;

  std::vector<Eigen::VectorXd> points(n);
  for (int v = 0; v < n; ++v) points[v] = dist.row(v).transpose();

  RngStream rng(derive_seed(seed, 0x6b6d6e73));
  std::vector<int> best_assign, assign;
  double best_inertia = kInf;
  for (int r = 0; r < restarts; ++r) {
    const double inertia = detail::lloyd_once(points, k, rng, assign);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      best_assign = assign;
    }
  }

  ClusterAssignment out;
  out.k = k;
  out.node_cluster = std::move(best_assign);
  out.edge_cluster.assign(net.num_edges(), -1);
  for (int e = 0; e < net.num_edges(); ++e) {
    const auto& ed = net.edge(e);
    if (out.node_cluster[ed.tail] == out.node_cluster[ed.head])
      out.edge_cluster[e] = out.node_cluster[ed.tail];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian cluster attack.

/// Perturbs every edge of the target cluster with a draw from
/// Normal(b_hat * c_e, variance c_e / 10), conditioned on being nonnegative.
/// Edges outside the cluster stay at zero.
inline std::vector<double> gaussian_attack(const RoadNetwork& net,
                                           const ClusterAssignment& clusters,
                                           int target, double b_hat, RngStream& rng) {
  if (b_hat <= 0.0) throw std::invalid_argument("gaussian_attack: b_hat <= 0");
  bool any = false;
  std::vector<double> a(net.num_edges(), 0.0);
  for (int e = 0; e < net.num_edges(); ++e) {
    if (clusters.edge_cluster[e] != target) continue;
    any = true;
    const double c = net.edge(e).attr.capacity;
    const double mean = b_hat * c;
    const double sd = std::sqrt(c / 10.0);
    double x;
    do {
      x = rng.normal(mean, sd);
    } while (x < 0.0);
    a[e] = x;
  }
  if (!any) throw std::invalid_argument("gaussian_attack: target cluster has no edges");
  return a;
}

class GaussianAttackPolicy final : public AttackerPolicy {
  struct Agent final : AttackerAgent {
    Agent(const GaussianAttackPolicy* p, uint64_t seed) : policy(p), rng(seed) {
      const auto& eligible = policy->eligible_;
      target = eligible[rng.uniform_int(eligible.size())];
    }
    std::vector<double> act(const StepView& view) override {
      return gaussian_attack(view.net, policy->clusters_, target, policy->b_hat_, rng);
    }
    const GaussianAttackPolicy* policy;
    RngStream rng;
    int target;
  };

 public:
  GaussianAttackPolicy(ClusterAssignment clusters, double b_hat)
      : clusters_(std::move(clusters)), b_hat_(b_hat),
        eligible_(clusters_.clusters_with_edges()) {
    if (b_hat <= 0.0) throw std::invalid_argument("GaussianAttackPolicy: b_hat <= 0");
    if (eligible_.empty())
      throw std::invalid_argument("GaussianAttackPolicy: no cluster contains an edge");
  }

  // target cluster is re-sampled uniformly per episode
  std::unique_ptr<AttackerAgent> spawn(uint64_t seed) const override {
    return std::make_unique<Agent>(this, seed);
  }

  const ClusterAssignment& clusters() const { return clusters_; }
  double b_hat() const { return b_hat_; }

 private:
  ClusterAssignment clusters_;
  double b_hat_;
  std::vector<int> eligible_;
};

// ---------------------------------------------------------------------------
// Bayesian multivariate-normal anomaly detector.

struct BayesianDetector {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // regularized, positive definite
  int history = 5;
  double regularization = 0.0;
  double log_tau = -kInf;  // alarm iff log-density <= log_tau
  uint64_t edge_order_hash = 0;
  std::vector<std::string> warnings;

  // cached factorization pieces
  Eigen::LLT<Eigen::MatrixXd> factor;
  double log_norm_const = 0.0;

  void factorize() {
    factor.compute(covariance);
    if (factor.info() != Eigen::Success)
      throw std::runtime_error("BayesianDetector: covariance not positive definite");
    double log_det = 0.0;
    const auto& l = factor.matrixLLT();
    for (int i = 0; i < covariance.rows(); ++i) log_det += 2.0 * std::log(l(i, i));
    log_norm_const =
        -0.5 * (covariance.rows() * std::log(2.0 * 3.14159265358979323846) + log_det);
  }

  double log_density(const Eigen::VectorXd& window) const {
    if (window.size() != mean.size())
      throw std::invalid_argument("BayesianDetector: window dimension mismatch");
    const Eigen::VectorXd diff = window - mean;
    const double maha = diff.dot(factor.solve(diff));
    return log_norm_const - 0.5 * maha;
  }
};

inline uint64_t edge_order_hash(const RoadNetwork& net) {
  uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](uint64_t x) {
    h ^= x;
    h *= 1099511628211ULL;
  };
  for (const auto& e : net.edges()) {
    mix(static_cast<uint64_t>(e.tail));
    mix(static_cast<uint64_t>(e.head));
  }
  return h;
}

/// Fits mean and (population) covariance over every per-step observation
/// window of the nominal traces, regularized by reg * I. Windows use the same
/// zero-padded layout the defender sees at runtime. When reg is not given it
/// defaults to 1e-3 * (mean diagonal variance + 1).
inline BayesianDetector fit_bayesian_detector(
    const std::vector<std::vector<std::vector<double>>>& nominal_traces, int history,
    std::optional<double> reg = std::nullopt, uint64_t edge_hash = 0) {
  if (nominal_traces.size() < 2)
    throw std::invalid_argument("fit_bayesian_detector: need >= 2 nominal episodes");
  if (history < 1) throw std::invalid_argument("fit_bayesian_detector: history < 1");
  if (reg && *reg <= 0.0)
    throw std::invalid_argument("fit_bayesian_detector: reg <= 0");

  std::vector<Eigen::VectorXd> windows;
  for (const auto& trace : nominal_traces) {
    std::vector<std::vector<double>> rows;
    rows.reserve(trace.size());
    for (const auto& row : trace) {
      rows.push_back(row);
      windows.push_back(defender_observe(rows, history));
    }
  }
  if (windows.empty())
    throw std::invalid_argument("fit_bayesian_detector: traces contain no steps");

  const long dim = windows[0].size();
  BayesianDetector det;
  det.history = history;
  det.edge_order_hash = edge_hash;

  det.mean = Eigen::VectorXd::Zero(dim);
  for (const auto& w : windows) det.mean += w;
  det.mean /= static_cast<double>(windows.size());

  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(dim, dim);
  for (const auto& w : windows) {
    const Eigen::VectorXd d = w - det.mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(windows.size());

  double effective_reg =
      reg ? *reg : 1e-3 * (cov.diagonal().mean() + 1.0);
  if (static_cast<long>(windows.size()) < dim + 1) {
    det.warnings.push_back(
        "fit_bayesian_detector: " + std::to_string(windows.size()) +
        " windows for dimension " + std::to_string(dim) +
        "; covariance is rank-deficient, regularization increased 10x");
    effective_reg *= 10.0;
  }
  det.regularization = effective_reg;
  det.covariance = cov + effective_reg * Eigen::MatrixXd::Identity(dim, dim);
  det.factorize();
  return det;
}

inline int bayes_decide(const BayesianDetector& det, const Eigen::VectorXd& window) {
  return det.log_density(window) <= det.log_tau ? 1 : 0;
}

/// Sets the alarm threshold at the target quantile of nominal-window
/// log-densities, so fresh nominal windows alarm at roughly that rate.
inline double calibrate_threshold(BayesianDetector& det,
                                  const std::vector<Eigen::VectorXd>& nominal_windows,
                                  double target_fp_quantile = 0.01) {
  if (nominal_windows.empty())
    throw std::invalid_argument("calibrate_threshold: no calibration windows");
  if (target_fp_quantile <= 0.0 || target_fp_quantile >= 1.0)
    throw std::invalid_argument("calibrate_threshold: quantile outside (0,1)");
  std::vector<double> densities;
  densities.reserve(nominal_windows.size());
  for (const auto& w : nominal_windows) densities.push_back(det.log_density(w));
  std::sort(densities.begin(), densities.end());
  const long n = static_cast<long>(densities.size());
  long idx = static_cast<long>(std::ceil(target_fp_quantile * n)) - 1;
  idx = std::clamp(idx, 0L, n - 1);
  det.log_tau = densities[idx];
  return det.log_tau;
}

class BayesianDetectorPolicy final : public DefenderPolicy {
  struct Agent final : DefenderAgent {
    explicit Agent(std::shared_ptr<const BayesianDetector> d) : det(std::move(d)) {}
    bool act(const std::vector<std::vector<double>>& observed) override {
      return bayes_decide(*det, defender_observe(observed, det->history)) == 1;
    }
    std::shared_ptr<const BayesianDetector> det;
  };

 public:
  explicit BayesianDetectorPolicy(std::shared_ptr<const BayesianDetector> det)
      : det_(std::move(det)) {
    if (!det_) throw std::invalid_argument("BayesianDetectorPolicy: null detector");
  }
  std::unique_ptr<DefenderAgent> spawn(uint64_t) const override {
    return std::make_unique<Agent>(det_);
  }
  const BayesianDetector& detector() const { return *det_; }
  std::shared_ptr<const BayesianDetector> detector_ptr() const { return det_; }

 private:
  std::shared_ptr<const BayesianDetector> det_;
};

}  // namespace fdi
