#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "fdi/common.hpp"
#include "fdi/mlp.hpp"

namespace fdi {

struct PpoHyper {
  double learning_rate = 3e-4;
  int n_steps = 50;
  int batch_size = 64;
  int n_epochs = 10;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_range = 0.2;
  double ent_coef = 0.01;
  double vf_coef = 0.5;
  double max_grad_norm = 0.5;
  bool normalize_advantage = true;
  long total_timesteps = 0;
  int n_envs = 128;
  bool time_limit_bootstrap = true;  // horizon cuts bootstrap with V(s_T)

  void validate() const {
    if (learning_rate <= 0 || n_steps < 1 || batch_size < 1 || n_epochs < 1 ||
        clip_range <= 0 || clip_range >= 1 || gamma <= 0 || gamma > 1 ||
        gae_lambda <= 0 || gae_lambda > 1 || ent_coef < 0 || vf_coef < 0 ||
        max_grad_norm <= 0 || n_envs < 1)
      throw std::invalid_argument("PpoHyper: value out of domain");
  }
};

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// GAE over one trajectory segment. `next_values[t]` is the bootstrap target
/// V(s_{t+1}) for step t (zero at natural terminals); `continues[t]` is 0
/// where an episode boundary cuts the recursion.
inline GaeResult gae_kernel(const std::vector<double>& rewards,
                            const std::vector<double>& values,
                            const std::vector<double>& next_values,
                            const std::vector<uint8_t>& continues, double gamma,
                            double lambda) {
  const size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || continues.size() != n)
    throw std::invalid_argument("gae_kernel: length mismatch");
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.returns.assign(n, 0.0);
  double last = 0.0;
  for (size_t t = n; t-- > 0;) {
    const double delta = rewards[t] + gamma * next_values[t] - values[t];
    last = delta + gamma * lambda * (continues[t] ? last : 0.0);
    out.advantages[t] = last;
    out.returns[t] = out.advantages[t] + values[t];
  }
  return out;
}

/// A_t = sum_k (gamma*lambda)^k delta_{t+k}, delta_t = r_t + gamma*V_{t+1}*(1-done) - V_t.
inline GaeResult gae_advantages(const std::vector<double>& rewards,
                                const std::vector<double>& values,
                                const std::vector<uint8_t>& dones,
                                double bootstrap_value, double gamma, double lambda) {
  const size_t n = rewards.size();
  std::vector<double> next_values(n, 0.0);
  std::vector<uint8_t> continues(n, 1);
  for (size_t t = 0; t < n; ++t) {
    if (dones[t]) {
      next_values[t] = 0.0;
      continues[t] = 0;
    } else {
      next_values[t] = t + 1 < n ? values[t + 1] : bootstrap_value;
    }
  }
  return gae_kernel(rewards, values, next_values, continues, gamma, lambda);
}

/// Fixed-capacity on-policy buffer, laid out sample-major as t * n_envs + j.
class RolloutBuffer {
 public:
  RolloutBuffer(int n_steps, int n_envs, int obs_dim, int act_dim)
      : n_steps_(n_steps), n_envs_(n_envs), obs_dim_(obs_dim), act_dim_(act_dim) {
    const size_t n = static_cast<size_t>(n_steps) * n_envs;
    obs.assign(n, Eigen::VectorXd());
    actions.assign(n, Eigen::VectorXd());
    log_probs.assign(n, 0.0);
    rewards.assign(n, 0.0);
    values.assign(n, 0.0);
    dones.assign(n, 0);
    terminal_values.assign(n, 0.0);
    advantages.assign(n, 0.0);
    returns.assign(n, 0.0);
  }

  int n_steps() const { return n_steps_; }
  int n_envs() const { return n_envs_; }
  size_t size() const { return obs.size(); }
  size_t index(int t, int j) const { return static_cast<size_t>(t) * n_envs_ + j; }

  void add(int t, int j, Eigen::VectorXd o, Eigen::VectorXd a, double log_prob,
           double reward, double value) {
    const size_t i = index(t, j);
    obs[i] = std::move(o);
    actions[i] = std::move(a);
    log_probs[i] = log_prob;
    rewards[i] = reward;
    values[i] = value;
  }

  /// Marks the episode in env j as ending after step t. `terminal_value` is
  /// the bootstrap past the boundary: 0 for a natural terminal, V(s_T) for a
  /// time-limit cut when time_limit_bootstrap is on.
  void mark_done(int t, int j, double terminal_value) {
    const size_t i = index(t, j);
    dones[i] = 1;
    terminal_values[i] = terminal_value;
  }

  /// Computes advantages/returns. `bootstrap[j]` is V of env j's current
  /// observation after the final collected step.
  void finalize(const std::vector<double>& bootstrap, double gamma, double lambda) {
    if (static_cast<int>(bootstrap.size()) != n_envs_)
      throw std::invalid_argument("RolloutBuffer::finalize: bootstrap size");
    std::vector<double> r(n_steps_), v(n_steps_), nv(n_steps_);
    std::vector<uint8_t> cont(n_steps_);
    for (int j = 0; j < n_envs_; ++j) {
      for (int t = 0; t < n_steps_; ++t) {
        const size_t i = index(t, j);
        r[t] = rewards[i];
        v[t] = values[i];
        if (dones[i]) {
          nv[t] = terminal_values[i];
          cont[t] = 0;
        } else {
          nv[t] = t + 1 < n_steps_ ? values[index(t + 1, j)] : bootstrap[j];
          cont[t] = 1;
        }
      }
      GaeResult g = gae_kernel(r, v, nv, cont, gamma, lambda);
      for (int t = 0; t < n_steps_; ++t) {
        advantages[index(t, j)] = g.advantages[t];
        returns[index(t, j)] = g.returns[t];
      }
    }
  }

  std::vector<Eigen::VectorXd> obs, actions;
  std::vector<double> log_probs, rewards, values, terminal_values;
  std::vector<uint8_t> dones;
  std::vector<double> advantages, returns;

 private:
  int n_steps_, n_envs_, obs_dim_, act_dim_;
};

struct PpoStats {
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  int minibatches = 0;
};

/// Clipped-surrogate loss over one minibatch; accumulates dLoss/dparams into
/// `grad` when non-null. One code path serves both the optimizer and the
/// finite-difference checks.
inline double ppo_loss_and_grad(const Mlp& net, const RolloutBuffer& buffer,
                                const std::vector<size_t>& batch,
                                const PpoHyper& hyper, Eigen::VectorXd* grad,
                                PpoStats* stats = nullptr) {
  const size_t bsz = batch.size();
  if (bsz == 0) throw std::invalid_argument("ppo_loss_and_grad: empty minibatch");
  const PolicyHead head = net.config().head;

  // per-minibatch advantage normalization (constants w.r.t. the parameters)
  std::vector<double> adv(bsz);
  for (size_t k = 0; k < bsz; ++k) adv[k] = buffer.advantages[batch[k]];
  if (hyper.normalize_advantage && bsz > 1) {
    double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / bsz;
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    const double sd = std::sqrt(var / bsz);
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }

  const double inv_b = 1.0 / static_cast<double>(bsz);
  double policy_loss = 0.0, value_loss = 0.0, entropy_sum = 0.0;
  double clip_count = 0.0, kl_sum = 0.0;

  Mlp::Cache cache;
  Eigen::VectorXd d_mean, d_log_std;
  for (size_t k = 0; k < bsz; ++k) {
    const size_t i = batch[k];
    const Mlp::Output out = net.forward(buffer.obs[i], cache);

    double log_prob, ent;
    if (head == PolicyHead::kGaussian) {
      log_prob = gaussian_log_prob(out.dist, out.log_std, buffer.actions[i]);
      ent = gaussian_entropy(out.log_std);
    } else {
      log_prob = bernoulli_log_prob(out.dist(0), buffer.actions[i](0));
      ent = bernoulli_entropy(out.dist(0));
    }

    const double ratio = std::exp(log_prob - buffer.log_probs[i]);
    const double clipped = std::clamp(ratio, 1.0 - hyper.clip_range,
                                      1.0 + hyper.clip_range);
    const double surr1 = ratio * adv[k];
    const double surr2 = clipped * adv[k];
    const bool take_unclipped = surr1 <= surr2;
    policy_loss += -std::min(surr1, surr2) * inv_b;
    if (std::abs(ratio - 1.0) > hyper.clip_range) clip_count += 1.0;
    kl_sum += (buffer.log_probs[i] - log_prob);

    const double verr = out.value - buffer.returns[i];
    value_loss += verr * verr * inv_b;
    entropy_sum += ent * inv_b;

    if (grad) {
      // d policy_loss / d log_prob: active only on the unclipped branch
      const double d_lp = take_unclipped ? -adv[k] * ratio * inv_b : 0.0;
      const double d_value = hyper.vf_coef * 2.0 * verr * inv_b;
      if (head == PolicyHead::kGaussian) {
        gaussian_log_prob_grad(out.dist, out.log_std, buffer.actions[i], d_mean,
                               d_log_std);
        net.backward(cache, d_lp * d_mean, d_value, *grad);
        // log-std block: surrogate term plus the entropy bonus (dH/dlogstd = 1)
        for (int d = 0; d < d_log_std.size(); ++d)
          (*grad)(net.log_std_offset() + d) +=
              d_lp * d_log_std(d) - hyper.ent_coef * inv_b;
      } else {
        const double d_logit =
            d_lp * bernoulli_log_prob_grad(out.dist(0), buffer.actions[i](0)) -
            hyper.ent_coef * inv_b * bernoulli_entropy_grad(out.dist(0));
        Eigen::VectorXd dd(1);
        dd << d_logit;
        net.backward(cache, dd, d_value, *grad);
      }
    }
  }

  const double loss =
      policy_loss + hyper.vf_coef * value_loss - hyper.ent_coef * entropy_sum;
  if (stats) {
    stats->policy_loss += policy_loss;
    stats->value_loss += value_loss;
    stats->entropy += entropy_sum;
    stats->clip_fraction += clip_count * inv_b;
    stats->approx_kl += kl_sum * inv_b;
    stats->minibatches += 1;
  }
  return loss;
}

/// One PPO update over a full buffer: n_epochs of shuffled minibatches,
/// per-minibatch gradient with global-norm clipping, Adam step, log-std
/// projection to its clamp range.
inline PpoStats ppo_update(Mlp& net, const RolloutBuffer& buffer,
                           const PpoHyper& hyper, Adam& opt, RngStream& rng) {
  hyper.validate();
  PpoStats stats;
  std::vector<size_t> order(buffer.size());
  std::iota(order.begin(), order.end(), size_t{0});
  Eigen::VectorXd grad(net.num_params());

  for (int epoch = 0; epoch < hyper.n_epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(hyper.batch_size)) {
      const size_t stop = std::min(order.size(),
                                   start + static_cast<size_t>(hyper.batch_size));
      std::vector<size_t> batch(order.begin() + start, order.begin() + stop);
      grad.setZero();
      const double loss = ppo_loss_and_grad(net, buffer, batch, hyper, &grad, &stats);
      if (!std::isfinite(loss))
        throw std::runtime_error(
            "ppo_update: non-finite loss (epoch " + std::to_string(epoch) +
            ", minibatch at " + std::to_string(start) + ")");
      const double norm = grad.norm();
      if (norm > hyper.max_grad_norm) grad *= hyper.max_grad_norm / norm;
      opt.step(net.params, grad);
      net.clamp_log_std();
    }
  }
  if (stats.minibatches > 0) {
    const double inv = 1.0 / stats.minibatches;
    stats.policy_loss *= inv;
    stats.value_loss *= inv;
    stats.entropy *= inv;
    stats.clip_fraction *= inv;
    stats.approx_kl *= inv;
  }
  return stats;
}

}  // namespace fdi
