#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "fdi/common.hpp"

namespace fdi {

inline double softplus(double z) {
  // overflow-safe: softplus(z) = max(z,0) + log1p(exp(-|z|))
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}
inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

enum class PolicyHead { kGaussian, kBernoulli };

struct MlpConfig {
  int obs_dim = 1;
  int action_dim = 1;  // mean dimension (Gaussian) — Bernoulli uses one logit
  PolicyHead head = PolicyHead::kGaussian;
  std::vector<int> hidden = {64, 64};

  int policy_out_dim() const { return head == PolicyHead::kGaussian ? action_dim : 1; }
  int log_std_dim() const { return head == PolicyHead::kGaussian ? action_dim : 0; }
};

constexpr double kLogStdMin = -10.0;
constexpr double kLogStdMax = 2.0;

/// Two-tower MLP (tanh hidden activations, linear outputs) over one flat
/// parameter vector: policy tower, then value tower, then the
/// state-independent log-std block for Gaussian heads.
class Mlp {
 public:
  explicit Mlp(MlpConfig config) : config_(std::move(config)) {
    build_layout();
    params = Eigen::VectorXd::Zero(total_size_);
  }

  const MlpConfig& config() const { return config_; }
  int num_params() const { return total_size_; }

  Eigen::VectorXd params;

  /// Orthogonal hidden layers (gain sqrt(2) for tanh), small-gain outputs
  /// (0.01 policy, 1.0 value), zero biases and log-std.
  void init_orthogonal(RngStream& rng) {
    params.setZero();
    for (size_t l = 0; l < policy_dims_.size() - 1; ++l) {
      const bool last = l + 2 == policy_dims_.size();
      set_weight(kPolicy, l, orthogonal(policy_dims_[l + 1], policy_dims_[l],
                                        last ? 0.01 : std::sqrt(2.0), rng));
    }
    for (size_t l = 0; l < value_dims_.size() - 1; ++l) {
      const bool last = l + 2 == value_dims_.size();
      set_weight(kValue, l, orthogonal(value_dims_[l + 1], value_dims_[l],
                                       last ? 1.0 : std::sqrt(2.0), rng));
    }
  }

  struct Output {
    Eigen::VectorXd dist;     // Gaussian mean, or a single logit
    Eigen::VectorXd log_std;  // empty for Bernoulli heads
    double value = 0.0;
  };

  struct Cache {
    std::vector<Eigen::VectorXd> policy_acts;  // input, tanh layers, linear out
    std::vector<Eigen::VectorXd> value_acts;
  };

  Output forward(const Eigen::VectorXd& obs) const {
    Cache scratch;
    return forward(obs, scratch);
  }

  Output forward(const Eigen::VectorXd& obs, Cache& cache) const {
    if (obs.size() != config_.obs_dim)
      throw std::invalid_argument("Mlp::forward: observation dimension mismatch");
    Output out;
    out.dist = run_tower(kPolicy, policy_dims_, obs, cache.policy_acts);
    out.value = run_tower(kValue, value_dims_, obs, cache.value_acts)(0);
    if (config_.head == PolicyHead::kGaussian) out.log_std = log_std();
    return out;
  }

  /// Accumulates dLoss/dparams into `grad` given upstream derivatives of the
  /// policy output and the scalar value. log-std gradients are the caller's
  /// job (that block is not produced by the towers).
  void backward(const Cache& cache, const Eigen::VectorXd& d_dist, double d_value,
                Eigen::VectorXd& grad) const {
    backprop_tower(kPolicy, policy_dims_, cache.policy_acts, d_dist, grad);
    Eigen::VectorXd dv(1);
    dv << d_value;
    backprop_tower(kValue, value_dims_, cache.value_acts, dv, grad);
  }

  Eigen::VectorXd log_std() const {
    return params.segment(log_std_offset_, config_.log_std_dim());
  }
  int log_std_offset() const { return log_std_offset_; }

  void clamp_log_std() {
    for (int i = 0; i < config_.log_std_dim(); ++i) {
      double& v = params(log_std_offset_ + i);
      v = std::clamp(v, kLogStdMin, kLogStdMax);
    }
  }

 private:
  enum Tower { kPolicy = 0, kValue = 1 };

  void build_layout() {
    policy_dims_ = {config_.obs_dim};
    value_dims_ = {config_.obs_dim};
    for (int h : config_.hidden) {
      policy_dims_.push_back(h);
      value_dims_.push_back(h);
    }
    policy_dims_.push_back(config_.policy_out_dim());
    value_dims_.push_back(1);

    int off = 0;
    auto add_tower = [&](const std::vector<int>& dims, std::vector<int>& w_off,
                         std::vector<int>& b_off) {
      for (size_t l = 0; l + 1 < dims.size(); ++l) {
        w_off.push_back(off);
        off += dims[l + 1] * dims[l];
        b_off.push_back(off);
        off += dims[l + 1];
      }
    };
    add_tower(policy_dims_, w_offsets_[kPolicy], b_offsets_[kPolicy]);
    add_tower(value_dims_, w_offsets_[kValue], b_offsets_[kValue]);
    log_std_offset_ = off;
    off += config_.log_std_dim();
    total_size_ = off;
  }

  Eigen::Map<const Eigen::MatrixXd> weight(Tower t, size_t layer) const {
    const auto& dims = t == kPolicy ? policy_dims_ : value_dims_;
    return {params.data() + w_offsets_[t][layer], dims[layer + 1], dims[layer]};
  }
  Eigen::Map<const Eigen::VectorXd> bias(Tower t, size_t layer) const {
    const auto& dims = t == kPolicy ? policy_dims_ : value_dims_;
    return {params.data() + b_offsets_[t][layer], dims[layer + 1]};
  }
  void set_weight(Tower t, size_t layer, const Eigen::MatrixXd& w) {
    const auto& dims = t == kPolicy ? policy_dims_ : value_dims_;
    Eigen::Map<Eigen::MatrixXd>(params.data() + w_offsets_[t][layer], dims[layer + 1],
                                dims[layer]) = w;
  }

  Eigen::VectorXd run_tower(Tower t, const std::vector<int>& dims,
                            const Eigen::VectorXd& input,
                            std::vector<Eigen::VectorXd>& acts) const {
    acts.clear();
    acts.push_back(input);
    Eigen::VectorXd x = input;
    const size_t layers = dims.size() - 1;
    for (size_t l = 0; l < layers; ++l) {
      x = weight(t, l) * x + bias(t, l);
      if (l + 1 < layers) x = x.array().tanh();
      acts.push_back(x);
    }
    return x;
  }

  void backprop_tower(Tower t, const std::vector<int>& dims,
                      const std::vector<Eigen::VectorXd>& acts,
                      const Eigen::VectorXd& d_out, Eigen::VectorXd& grad) const {
    const size_t layers = dims.size() - 1;
    Eigen::VectorXd delta = d_out;
    for (size_t l = layers; l-- > 0;) {
      // delta is dL/d(pre-activation of layer l)
      if (l + 1 < layers) {
        // acts[l+1] holds tanh output for hidden layers
        delta = delta.cwiseProduct(
            (1.0 - acts[l + 1].array().square()).matrix());
      }
      Eigen::Map<Eigen::MatrixXd> gw(grad.data() + w_offsets_[t][l], dims[l + 1],
                                     dims[l]);
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + b_offsets_[t][l], dims[l + 1]);
      gw.noalias() += delta * acts[l].transpose();
      gb += delta;
      if (l > 0) delta = weight(t, l).transpose() * delta;
    }
  }

  static Eigen::MatrixXd orthogonal(int rows, int cols, double gain, RngStream& rng) {
    const int n = std::max(rows, cols);
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) a(i, j) = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ();
    Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < n; ++j)
      if (r(j, j) < 0) q.col(j) = -q.col(j);
    return gain * q.topLeftCorner(rows, cols);
  }

  MlpConfig config_;
  std::vector<int> policy_dims_, value_dims_;
  std::vector<int> w_offsets_[2], b_offsets_[2];
  int log_std_offset_ = 0;
  int total_size_ = 0;
};

// ---------------------------------------------------------------------------
// Closed-form log-probabilities and entropies for the two policy heads.

constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

struct GaussianSample {
  Eigen::VectorXd action;
  double log_prob = 0.0;
};

inline GaussianSample sample_gaussian(const Eigen::VectorXd& mean,
                                      const Eigen::VectorXd& log_std, RngStream& rng) {
  GaussianSample s;
  s.action.resize(mean.size());
  for (int i = 0; i < mean.size(); ++i)
    s.action(i) = mean(i) + std::exp(log_std(i)) * rng.normal();
  for (int i = 0; i < mean.size(); ++i) {
    const double z = (s.action(i) - mean(i)) / std::exp(log_std(i));
    s.log_prob += -0.5 * z * z - log_std(i) - 0.5 * kLog2Pi;
  }
  return s;
}

inline double gaussian_log_prob(const Eigen::VectorXd& mean,
                                const Eigen::VectorXd& log_std,
                                const Eigen::VectorXd& action) {
  double lp = 0.0;
  for (int i = 0; i < mean.size(); ++i) {
    const double z = (action(i) - mean(i)) / std::exp(log_std(i));
    lp += -0.5 * z * z - log_std(i) - 0.5 * kLog2Pi;
  }
  return lp;
}

/// d log_prob / d mean and d log_prob / d log_std.
inline void gaussian_log_prob_grad(const Eigen::VectorXd& mean,
                                   const Eigen::VectorXd& log_std,
                                   const Eigen::VectorXd& action,
                                   Eigen::VectorXd& d_mean,
                                   Eigen::VectorXd& d_log_std) {
  d_mean.resize(mean.size());
  d_log_std.resize(mean.size());
  for (int i = 0; i < mean.size(); ++i) {
    const double inv_var = std::exp(-2.0 * log_std(i));
    const double diff = action(i) - mean(i);
    d_mean(i) = diff * inv_var;
    d_log_std(i) = diff * diff * inv_var - 1.0;
  }
}

inline double gaussian_entropy(const Eigen::VectorXd& log_std) {
  double h = 0.0;
  for (int i = 0; i < log_std.size(); ++i) h += log_std(i) + 0.5 * (1.0 + kLog2Pi);
  return h;
}

inline double bernoulli_log_prob(double logit, double action01) {
  return action01 * logit - softplus(logit);
}
inline double bernoulli_log_prob_grad(double logit, double action01) {
  return action01 - sigmoid(logit);
}
inline double bernoulli_entropy(double logit) {
  return softplus(logit) - logit * sigmoid(logit);
}
inline double bernoulli_entropy_grad(double logit) {
  const double p = sigmoid(logit);
  return -logit * p * (1.0 - p);
}

/// (log-probability, entropy) of `action` under the head's distribution.
inline std::pair<double, double> log_prob_and_entropy(const Mlp::Output& out,
                                                      PolicyHead head,
                                                      const Eigen::VectorXd& action) {
  if (head == PolicyHead::kGaussian) {
    return {gaussian_log_prob(out.dist, out.log_std, action),
            gaussian_entropy(out.log_std)};
  }
  return {bernoulli_log_prob(out.dist(0), action(0)), bernoulli_entropy(out.dist(0))};
}

// ---------------------------------------------------------------------------

/// First-order adaptive-moment optimizer (beta 0.9/0.999, eps 1e-8).
class Adam {
 public:
  explicit Adam(int size, double lr = 3e-4)
      : lr_(lr), m_(Eigen::VectorXd::Zero(size)), v_(Eigen::VectorXd::Zero(size)) {}

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square();
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    params.array() -=
        lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

}  // namespace fdi
