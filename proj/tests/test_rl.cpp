#include <catch2/catch_amalgamated.hpp>

#include "fdi/mlp.hpp"
#include "fdi/ppo.hpp"
#include "test_util.hpp"

using Catch::Approx;

namespace {

fdi::Mlp tiny_net(fdi::PolicyHead head, int obs_dim, int action_dim, uint64_t seed) {
  fdi::MlpConfig cfg;
  cfg.obs_dim = obs_dim;
  cfg.action_dim = action_dim;
  cfg.head = head;
  cfg.hidden = {4, 3};
  fdi::Mlp net(cfg);
  fdi::RngStream rng(seed);
  net.init_orthogonal(rng);
  return net;
}

/// Fills a rollout buffer by sampling actions from `actor` while the losses
/// are later evaluated under `net` (ratio != 1 when they differ).
fdi::RolloutBuffer make_buffer(const fdi::Mlp& actor, int n_steps, uint64_t seed,
                               double reward_scale = 1.0) {
  const auto& cfg = actor.config();
  fdi::RolloutBuffer buffer(n_steps, 1, cfg.obs_dim, cfg.action_dim);
  fdi::RngStream rng(seed);
  for (int t = 0; t < n_steps; ++t) {
    Eigen::VectorXd obs(cfg.obs_dim);
    for (int i = 0; i < cfg.obs_dim; ++i) obs(i) = rng.uniform(-1.0, 1.0);
    const fdi::Mlp::Output out = actor.forward(obs);
    Eigen::VectorXd action;
    double log_prob;
    if (cfg.head == fdi::PolicyHead::kGaussian) {
      auto s = fdi::sample_gaussian(out.dist, out.log_std, rng);
      action = s.action;
      log_prob = s.log_prob;
    } else {
      const double p = fdi::sigmoid(out.dist(0));
      const double a = rng.uniform() < p ? 1.0 : 0.0;
      action = Eigen::VectorXd::Constant(1, a);
      log_prob = fdi::bernoulli_log_prob(out.dist(0), a);
    }
    buffer.add(t, 0, obs, action, log_prob, reward_scale * rng.uniform(-1.0, 1.0),
               out.value);
    if (t == n_steps / 2) buffer.mark_done(t, 0, 0.0);
  }
  buffer.finalize({0.1}, 0.99, 0.95);
  return buffer;
}

}  // namespace

TEST_CASE("zero network outputs zero mean, zero value, fair coin") {
  fdi::MlpConfig cfg;
  cfg.obs_dim = 3;
  cfg.action_dim = 2;
  cfg.head = fdi::PolicyHead::kGaussian;
  fdi::Mlp net(cfg);
  const auto out = net.forward(Eigen::VectorXd::Constant(3, 0.7));
  CHECK(out.dist.norm() == 0.0);
  CHECK(out.value == 0.0);
  CHECK(out.log_std.norm() == 0.0);

  cfg.head = fdi::PolicyHead::kBernoulli;
  cfg.action_dim = 1;
  fdi::Mlp bnet(cfg);
  const auto bout = bnet.forward(Eigen::VectorXd::Constant(3, -0.3));
  CHECK(fdi::sigmoid(bout.dist(0)) == Approx(0.5));
}

TEST_CASE("forward is deterministic in parameters and observation") {
  const auto net = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 5);
  Eigen::VectorXd obs(3);
  obs << 0.2, -0.4, 1.0;
  const auto a = net.forward(obs);
  const auto b = net.forward(obs);
  CHECK(a.dist == b.dist);
  CHECK(a.value == b.value);
  CHECK_THROWS_AS(net.forward(Eigen::VectorXd::Zero(4)), std::invalid_argument);
}

TEST_CASE("orthogonal initialization produces orthonormal columns") {
  const auto net = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 9);
  // first policy layer is 4x3 with gain sqrt(2): W^T W = 2 I
  Eigen::Map<const Eigen::MatrixXd> w(net.params.data(), 4, 3);
  const Eigen::MatrixXd gram = w.transpose() * w;
  CHECK((gram - 2.0 * Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-10);
}

TEST_CASE("closed-form log probabilities and entropies") {
  SECTION("standard normal at its mode") {
    const int dim = 3;
    const Eigen::VectorXd mean = Eigen::VectorXd::Zero(dim);
    const Eigen::VectorXd log_std = Eigen::VectorXd::Zero(dim);
    CHECK(fdi::gaussian_log_prob(mean, log_std, mean) ==
          Approx(-0.5 * dim * std::log(2.0 * M_PI)));
  }
  SECTION("fair-coin entropy is ln 2") {
    CHECK(fdi::bernoulli_entropy(0.0) == Approx(std::log(2.0)));
    CHECK(fdi::bernoulli_log_prob(0.0, 1.0) == Approx(std::log(0.5)));
  }
  SECTION("gaussian density integrates to one") {
    const Eigen::VectorXd mean = Eigen::VectorXd::Constant(1, 0.3);
    const Eigen::VectorXd log_std = Eigen::VectorXd::Constant(1, -0.2);
    const double sd = std::exp(-0.2);
    const double integral = testutil::quadrature(
        [&](double x) {
          Eigen::VectorXd a(1);
          a << x;
          return fdi::gaussian_log_prob(mean, log_std, a);
        },
        0.3 - 10 * sd, 0.3 + 10 * sd);
    CHECK(integral == Approx(1.0).epsilon(1e-6));
  }
  SECTION("gaussian entropy ignores the mean") {
    fdi::RngStream rng(2);
    Eigen::VectorXd log_std(3);
    log_std << -0.5, 0.1, 0.4;
    const double h = fdi::gaussian_entropy(log_std);
    for (int k = 0; k < 20; ++k) {
      (void)rng.uniform();
      CHECK(fdi::gaussian_entropy(log_std) == h);
    }
  }
  SECTION("bernoulli probabilities sum to one") {
    for (double z : {-3.0, -0.5, 0.0, 1.2, 4.0})
      CHECK(std::exp(fdi::bernoulli_log_prob(z, 0.0)) +
                std::exp(fdi::bernoulli_log_prob(z, 1.0)) ==
            Approx(1.0));
  }
}

TEST_CASE("distribution gradients match finite differences") {
  fdi::RngStream rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd mean(2), log_std(2), action(2);
    for (int i = 0; i < 2; ++i) {
      mean(i) = rng.uniform(-1, 1);
      log_std(i) = rng.uniform(-1, 0.5);
      action(i) = rng.uniform(-2, 2);
    }
    Eigen::VectorXd d_mean, d_log_std;
    fdi::gaussian_log_prob_grad(mean, log_std, action, d_mean, d_log_std);
    const double h = 1e-6;
    for (int i = 0; i < 2; ++i) {
      Eigen::VectorXd m_up = mean, m_dn = mean;
      m_up(i) += h;
      m_dn(i) -= h;
      const double fd = (fdi::gaussian_log_prob(m_up, log_std, action) -
                         fdi::gaussian_log_prob(m_dn, log_std, action)) /
                        (2 * h);
      CHECK(d_mean(i) == Approx(fd).margin(1e-6));
      Eigen::VectorXd s_up = log_std, s_dn = log_std;
      s_up(i) += h;
      s_dn(i) -= h;
      const double fd_s = (fdi::gaussian_log_prob(mean, s_up, action) -
                           fdi::gaussian_log_prob(mean, s_dn, action)) /
                          (2 * h);
      CHECK(d_log_std(i) == Approx(fd_s).margin(1e-6));
    }
    const double z = rng.uniform(-2, 2);
    const double fd_z = (fdi::bernoulli_entropy(z + h) - fdi::bernoulli_entropy(z - h)) /
                        (2 * h);
    CHECK(fdi::bernoulli_entropy_grad(z) == Approx(fd_z).margin(1e-6));
  }
}

TEST_CASE("gae collapses correctly in its limit cases") {
  const std::vector<double> rewards = {1.0, 2.0, -0.5, 3.0};
  const std::vector<double> values = {0.3, -0.2, 0.6, 0.1};
  const std::vector<uint8_t> no_dones(4, 0);

  SECTION("lambda = 0 gives one-step TD residuals") {
    const auto g = fdi::gae_advantages(rewards, values, no_dones, 0.5, 0.9, 0.0);
    for (size_t t = 0; t < rewards.size(); ++t) {
      const double next_v = t + 1 < values.size() ? values[t + 1] : 0.5;
      CHECK(g.advantages[t] == Approx(rewards[t] + 0.9 * next_v - values[t]));
      CHECK(g.returns[t] == Approx(g.advantages[t] + values[t]));
    }
  }

  SECTION("gamma = lambda = 1 with zero values is reward-to-go") {
    const std::vector<double> zeros(4, 0.0);
    const auto g = fdi::gae_advantages(rewards, zeros, no_dones, 0.0, 1.0, 1.0);
    CHECK(g.advantages[3] == Approx(3.0));
    CHECK(g.advantages[2] == Approx(2.5));
    CHECK(g.advantages[1] == Approx(4.5));
    CHECK(g.advantages[0] == Approx(5.5));
  }

  SECTION("random sequences match the double-sum oracle") {
    fdi::RngStream rng(77);
    for (int trial = 0; trial < 50; ++trial) {
      const int n = 10;
      std::vector<double> r(n), v(n);
      std::vector<uint8_t> dones(n, 0);
      for (int t = 0; t < n; ++t) {
        r[t] = rng.uniform(-2, 2);
        v[t] = rng.uniform(-2, 2);
        dones[t] = rng.uniform() < 0.2 ? 1 : 0;
      }
      const double boot = rng.uniform(-1, 1);
      const double gamma = rng.uniform(0.8, 1.0);
      const double lambda = rng.uniform(0.5, 1.0);
      const auto g = fdi::gae_advantages(r, v, dones, boot, gamma, lambda);
      const auto oracle = testutil::gae_double_sum(r, v, dones, boot, gamma, lambda);
      for (int t = 0; t < n; ++t)
        CHECK(g.advantages[t] == Approx(oracle[t]).margin(1e-12));
    }
  }
}

TEST_CASE("ppo surrogate at ratio one equals the mean advantage") {
  const auto net = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 13);
  const auto buffer = make_buffer(net, 16, 21);
  fdi::PpoHyper hyper;
  hyper.normalize_advantage = false;
  std::vector<size_t> all(buffer.size());
  std::iota(all.begin(), all.end(), size_t{0});
  fdi::PpoStats stats;
  fdi::ppo_loss_and_grad(net, buffer, all, hyper, nullptr, &stats);
  double mean_adv = 0.0;
  for (double a : buffer.advantages) mean_adv += a;
  mean_adv /= buffer.advantages.size();
  CHECK(stats.policy_loss == Approx(-mean_adv).margin(1e-12));
  CHECK(stats.clip_fraction == 0.0);
}

TEST_CASE("per-sample surrogate respects the clipping envelope") {
  const auto actor = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 17);
  auto net = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 18);  // different params
  const auto buffer = make_buffer(actor, 32, 23);
  fdi::PpoHyper hyper;
  hyper.normalize_advantage = false;
  hyper.vf_coef = 0.0;
  hyper.ent_coef = 0.0;
  for (size_t i = 0; i < buffer.size(); ++i) {
    fdi::PpoStats stats;
    fdi::ppo_loss_and_grad(net, buffer, {i}, hyper, nullptr, &stats);
    const auto out = net.forward(buffer.obs[i]);
    const double lp = fdi::gaussian_log_prob(out.dist, out.log_std, buffer.actions[i]);
    const double ratio = std::exp(lp - buffer.log_probs[i]);
    const double adv = buffer.advantages[i];
    const double clipped = std::clamp(ratio, 0.8, 1.2) * adv;
    CHECK(-stats.policy_loss <= std::max(ratio * adv, clipped) + 1e-12);
    CHECK(-stats.policy_loss == Approx(std::min(ratio * adv, clipped)).margin(1e-12));
  }
}

TEST_CASE("analytic ppo gradients match central finite differences") {
  fdi::RngStream seeds(404);
  for (int trial = 0; trial < 3; ++trial) {
    const bool gaussian = trial % 2 == 0;
    const auto actor = tiny_net(gaussian ? fdi::PolicyHead::kGaussian
                                         : fdi::PolicyHead::kBernoulli,
                                3, gaussian ? 2 : 1, seeds.next_u64());
    auto net = tiny_net(gaussian ? fdi::PolicyHead::kGaussian
                                 : fdi::PolicyHead::kBernoulli,
                        3, gaussian ? 2 : 1, seeds.next_u64());
    const auto buffer = make_buffer(actor, 12, seeds.next_u64());
    fdi::PpoHyper hyper;
    std::vector<size_t> batch(buffer.size());
    std::iota(batch.begin(), batch.end(), size_t{0});

    Eigen::VectorXd grad = Eigen::VectorXd::Zero(net.num_params());
    fdi::ppo_loss_and_grad(net, buffer, batch, hyper, &grad);
    const double err = testutil::max_fd_error(
        net.params,
        [&] { return fdi::ppo_loss_and_grad(net, buffer, batch, hyper, nullptr); },
        grad);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("ppo_update is deterministic and clamps the log-std block") {
  const auto actor = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 31);
  auto net_a = actor;
  auto net_b = actor;
  const auto buffer = make_buffer(actor, 64, 37);
  fdi::PpoHyper hyper;
  hyper.batch_size = 16;
  hyper.n_epochs = 4;

  fdi::Adam opt_a(net_a.num_params(), hyper.learning_rate);
  fdi::Adam opt_b(net_b.num_params(), hyper.learning_rate);
  fdi::RngStream rng_a(55), rng_b(55);
  fdi::ppo_update(net_a, buffer, hyper, opt_a, rng_a);
  fdi::ppo_update(net_b, buffer, hyper, opt_b, rng_b);
  CHECK(net_a.params == net_b.params);

  const Eigen::VectorXd ls = net_a.log_std();
  for (int i = 0; i < ls.size(); ++i) {
    CHECK(ls(i) >= fdi::kLogStdMin);
    CHECK(ls(i) <= fdi::kLogStdMax);
  }
}

TEST_CASE("non-finite losses abort the update with diagnostics") {
  const auto actor = tiny_net(fdi::PolicyHead::kGaussian, 3, 2, 41);
  auto net = actor;
  auto buffer = make_buffer(actor, 16, 43);
  buffer.advantages[3] = std::numeric_limits<double>::infinity();
  fdi::PpoHyper hyper;
  hyper.normalize_advantage = false;
  fdi::Adam opt(net.num_params(), hyper.learning_rate);
  fdi::RngStream rng(1);
  CHECK_THROWS_WITH(fdi::ppo_update(net, buffer, hyper, opt, rng),
                    Catch::Matchers::ContainsSubstring("non-finite"));
}

TEST_CASE("adam minimizes a separable quadratic") {
  Eigen::VectorXd p = Eigen::VectorXd::Constant(2, 5.0);
  fdi::Adam opt(2, 0.1);
  for (int k = 0; k < 500; ++k) {
    const Eigen::VectorXd grad = 2.0 * (p - Eigen::VectorXd::Constant(2, 3.0));
    opt.step(p, grad);
  }
  CHECK((p - Eigen::VectorXd::Constant(2, 3.0)).norm() < 1e-3);
}
