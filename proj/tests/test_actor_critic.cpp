#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "hfrl/rl/actor_critic.hpp"
#include "hfrl/rl/checkpoint.hpp"
#include "hfrl/rl/learner.hpp"

using namespace hfrl;
using namespace hfrl::rl;

namespace {

ArchSpec small_arch(std::size_t obs = 3, std::vector<std::size_t> hidden = {4, 5},
                    nn::Activation act = nn::Activation::tanh, std::size_t heads = 1) {
  ArchSpec a;
  a.obs_dim = obs;
  a.hidden = std::move(hidden);
  a.activation = act;
  a.heads = heads;
  return a;
}

ModelParams random_params(const ArchSpec& arch, std::uint64_t seed, double scale = 0.8) {
  RngStream rng(seed, 77);
  auto w = ModelParams::zeros(arch);
  for (double& x : w.actor) x = rng.uniform(-scale, scale);
  for (double& x : w.critic) x = rng.uniform(-scale, scale);
  return w;
}

// Reference forward pass written out layer by layer: W is out x in,
// row-major, followed by the bias vector.
std::vector<double> ref_mlp(const std::vector<std::size_t>& sizes, const std::vector<double>& p,
                            std::vector<double> x, bool tanh_act) {
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    std::vector<double> y(out);
    for (std::size_t i = 0; i < out; ++i) {
      double z = p[off + out * in + i];
      for (std::size_t j = 0; j < in; ++j) z += p[off + i * in + j] * x[j];
      const bool last = l + 2 == sizes.size();
      y[i] = last ? z : (tanh_act ? std::tanh(z) : std::max(0.0, z));
    }
    off += out * in + out;
    x = std::move(y);
  }
  return x;
}

Trajectory random_traj(std::size_t T, std::size_t obs_dim, std::size_t heads, std::uint64_t seed) {
  RngStream rng(seed, 99);
  Trajectory tr;
  std::vector<double> o(obs_dim);
  for (double& x : o) x = rng.uniform();
  for (std::size_t t = 0; t < T; ++t) {
    std::vector<double> n(obs_dim);
    for (double& x : n) x = rng.uniform();
    std::vector<int> a(heads);
    for (int& x : a) x = rng.bernoulli(0.5) ? 1 : 0;
    tr.push_back({o, a, -rng.uniform(0.0, 4.0), n});
    o = n;
  }
  return tr;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    worst = std::max(worst, d / std::max(1e-6, std::max(std::abs(a[i]), std::abs(b[i]))));
  }
  return worst;
}

std::vector<double> fd_gradient(const ModelParams& w, const Trajectory& tr, double gamma, std::size_t K,
                                const LossConfig& cfg) {
  auto flat = w.flatten();
  std::vector<double> g(flat.size());
  const double h = 1e-5;
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double x = flat[i];
    flat[i] = x + h;
    const double up = scalar_loss(ModelParams::unflatten(w.arch, flat), tr, gamma, K, cfg);
    flat[i] = x - h;
    const double dn = scalar_loss(ModelParams::unflatten(w.arch, flat), tr, gamma, K, cfg);
    flat[i] = x;
    g[i] = (up - dn) / (2 * h);
  }
  return g;
}

}  // namespace

TEST(Forward, ZeroActorGivesUniform) {
  const auto w = ModelParams::zeros(small_arch());
  const std::vector<double> obs{0.3, -1.0, 2.0};
  const auto p = forward_actor(w, obs);
  ASSERT_EQ(p.size(), 2u);
  EXPECT_EQ(p[0], 0.5);
  EXPECT_EQ(p[1], 0.5);
  EXPECT_EQ(forward_critic(w, obs), 0.0);
}

TEST(Forward, SaturatedLogits) {
  auto w = ModelParams::zeros(small_arch(1, {1}));
  // Output biases of the actor: logits (+400, -400).
  const auto shape = w.arch.actor_shape();
  const std::size_t out_bias = shape.offset(1) + 2 * 1;
  w.actor[out_bias] = 400.0;
  w.actor[out_bias + 1] = -400.0;
  const std::vector<double> obs{0.0};
  const auto p = forward_actor(w, obs);
  EXPECT_NEAR(p[0], 1.0, 1e-15);
  EXPECT_NEAR(p[1], 0.0, 1e-15);
  EXPECT_TRUE(std::isfinite(p[0]) && std::isfinite(p[1]));
}

TEST(Forward, MatchesReferenceMatrixArithmetic) {
  for (auto act : {nn::Activation::tanh, nn::Activation::relu}) {
    const auto arch = small_arch(3, {4, 5}, act);
    const auto w = random_params(arch, 11);
    const std::vector<double> obs{0.2, -0.7, 1.3};
    const bool t = act == nn::Activation::tanh;
    const auto logits = ref_mlp({3, 4, 5, 2}, w.actor, obs, t);
    const double m = std::max(logits[0], logits[1]);
    const double e0 = std::exp(logits[0] - m), e1 = std::exp(logits[1] - m);
    const auto p = forward_actor(w, obs);
    EXPECT_NEAR(p[0], e0 / (e0 + e1), 1e-14);
    EXPECT_NEAR(p[1], e1 / (e0 + e1), 1e-14);
    EXPECT_NEAR(forward_critic(w, obs), ref_mlp({3, 4, 5, 1}, w.critic, obs, t)[0], 1e-14);
  }
}

TEST(Forward, DimensionMismatchThrows) {
  const auto w = ModelParams::zeros(small_arch());
  const std::vector<double> obs{1.0, 2.0};
  EXPECT_THROW(forward_actor(w, obs), std::invalid_argument);
  EXPECT_THROW(forward_critic(w, obs), std::invalid_argument);
}

TEST(Forward, DoublingLastCriticLayerDoublesValue) {
  const auto arch = small_arch();
  auto w = random_params(arch, 5);
  const std::vector<double> obs{0.1, 0.5, -0.4};
  const double v = forward_critic(w, obs);
  const auto shape = arch.critic_shape();
  for (std::size_t i = shape.offset(shape.layers() - 1); i < w.critic.size(); ++i) w.critic[i] *= 2.0;
  EXPECT_NEAR(forward_critic(w, obs), 2.0 * v, 1e-14);
}

TEST(Forward, SoftmaxSumsToOne) {
  const auto arch = small_arch(3, {6}, nn::Activation::tanh, 3);
  RngStream rng(3);
  for (int k = 0; k < 200; ++k) {
    const auto w = random_params(arch, static_cast<std::uint64_t>(k), 5.0);
    std::vector<double> obs{rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    const auto p = forward_actor(w, obs);
    for (std::size_t h = 0; h < 3; ++h) {
      EXPECT_GE(p[2 * h], 0.0);
      EXPECT_NEAR(p[2 * h] + p[2 * h + 1], 1.0, 1e-12);
    }
  }
}

TEST(Sample, DegenerateDistribution) {
  RngStream rng(1);
  const std::vector<double> p{1.0, 0.0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_action(p, rng)[0], 0);
}

TEST(Sample, UniformFrequency) {
  RngStream rng(2024);
  const std::vector<double> p{0.5, 0.5};
  int ones = 0;
  for (int i = 0; i < 10000; ++i) ones += sample_action(p, rng)[0];
  EXPECT_NEAR(ones / 10000.0, 0.5, 0.02);
}

TEST(Sample, GreedyTakesArgmax) {
  RngStream rng(1);
  EXPECT_EQ(sample_action(std::vector<double>{0.4, 0.6}, rng, true)[0], 1);
  EXPECT_EQ(sample_action(std::vector<double>{0.6, 0.4}, rng, true)[0], 0);
}

TEST(Advantage, KStepFormula) {
  // Critic is a bare bias: V(s) = first observation coordinate times a weight
  // of one, built with no hidden layers.
  ArchSpec arch = small_arch(1, {});
  auto w = ModelParams::zeros(arch);
  w.critic[0] = 1.0;  // V(s) = s
  Trajectory tr{{{-2.0}, {0}, -1.0, {7.0}}, {{7.0}, {1}, -1.0, {-5.0}}};
  const auto est = compute_advantages(tr, w, 0.9, 2);
  EXPECT_NEAR(est.advantages[0], -1 + 0.9 * -1 + 0.81 * -5 - (-2), 1e-12);
  EXPECT_NEAR(est.advantages[0], -3.95, 1e-12);
  // Second step is truncated to k = 1 with the final next state as bootstrap.
  EXPECT_NEAR(est.advantages[1], -1 + 0.9 * -5 - 7.0, 1e-12);
}

TEST(Advantage, ZeroCriticGivesReward) {
  const auto w = ModelParams::zeros(small_arch());
  const auto tr = random_traj(6, 3, 1, 4);
  const auto est = compute_advantages(tr, w, 0.95, 1);
  for (std::size_t t = 0; t < tr.size(); ++t) EXPECT_EQ(est.advantages[t], tr[t].reward);
}

TEST(Advantage, ConstantCritic) {
  auto w = ModelParams::zeros(small_arch());
  const double c = -3.0;
  w.critic.back() = c;  // output bias
  auto tr = random_traj(5, 3, 1, 8);
  for (auto& x : tr) x.reward = 0.0;
  const auto est = compute_advantages(tr, w, 0.9, 1);
  for (double a : est.advantages) EXPECT_NEAR(a, -(1 - 0.9) * c, 1e-12);
}

TEST(Advantage, Errors) {
  const auto w = ModelParams::zeros(small_arch());
  EXPECT_THROW(compute_advantages({}, w, 0.9, 1), std::invalid_argument);
  const auto tr = random_traj(3, 3, 1, 1);
  EXPECT_THROW(compute_advantages(tr, w, 0.9, 0), std::invalid_argument);
  EXPECT_THROW(compute_advantages(tr, w, 1.0, 1), std::invalid_argument);
}

TEST(ScalarLoss, ClosedFormWithExactCritic) {
  // Linear critic V(s) = s; uniform policy. Two steps, K = 1.
  ArchSpec arch = small_arch(1, {});
  auto w = ModelParams::zeros(arch);
  w.critic[0] = 1.0;
  const double g = 0.5;
  // Targets: r0 + g*V(s1) and r1 + g*V(s2). Choose states so V matches them.
  // s2 = 2, r1 = -1 -> target1 = 0 = s1. s1 = 0, r0 = -1 -> target0 = -1 = s0.
  Trajectory tr{{{-1.0}, {1}, -1.0, {0.0}}, {{0.0}, {0}, -1.0, {2.0}}};
  const auto est = compute_advantages(tr, w, g, 1);
  EXPECT_NEAR(est.advantages[0], 0.0, 1e-15);
  EXPECT_NEAR(est.advantages[1], 0.0, 1e-15);
  LossConfig cfg;
  cfg.entropy = false;
  const double mean_adv = (est.advantages[0] + est.advantages[1]) / 2;
  EXPECT_NEAR(scalar_loss(w, tr, g, 1, cfg), -std::log(0.5) * mean_adv, 1e-15);

  // Perturb the reward so the advantage is non-zero; the critic term then
  // contributes 0.5 * A^2.
  tr[1].reward = -3.0;
  const double a1 = -3.0 + g * 2.0 - 0.0;
  const double expect = 0.5 * ((-std::log(0.5) * 0.0) + (-std::log(0.5) * a1 + 0.5 * a1 * a1));
  EXPECT_NEAR(scalar_loss(w, tr, g, 1, cfg), expect, 1e-14);
  // With entropy on, the uniform policy subtracts 0.01 * log 2 per step.
  EXPECT_NEAR(scalar_loss(w, tr, g, 1), expect - 0.01 * std::log(2.0), 1e-14);
}

TEST(ScalarLoss, DuplicatedTrajectoryAndPurity) {
  const auto arch = small_arch();
  const auto w = random_params(arch, 9);
  // K = 1 so each step depends only on its own transition.
  const auto tr = random_traj(7, 3, 1, 3);
  Trajectory twice;
  for (const auto& x : tr) {
    twice.push_back(x);
    twice.push_back(x);
  }
  const double a = scalar_loss(w, tr, 0.9, 1);
  EXPECT_NEAR(scalar_loss(w, twice, 0.9, 1), a, 1e-13);
  EXPECT_EQ(scalar_loss(w, tr, 0.9, 1), a);
}

TEST(Gradient, FullModeMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const std::size_t heads = seed % 3 == 0 ? 2 : 1;
    const auto arch = small_arch(3, {5, 4}, nn::Activation::tanh, heads);
    const auto w = random_params(arch, seed, 0.6);
    const auto tr = random_traj(6, 3, heads, seed + 100);
    const std::size_t K = 1 + seed % 4;
    const auto g = loss_gradient(w, tr, 0.9, K, {}, GradientMode::full);
    EXPECT_NEAR(g.loss, scalar_loss(w, tr, 0.9, K), 1e-12);
    EXPECT_LE(max_rel_err(g.flatten(), fd_gradient(w, tr, 0.9, K, {})), 1e-4) << "seed " << seed;
  }
}

TEST(Gradient, SemiModeMatchesFrozenFiniteDifferences) {
  // Semi-gradient equals the derivative of the surrogate with A and targets
  // held at their values under w.
  const auto arch = small_arch(3, {4}, nn::Activation::tanh);
  const auto w = random_params(arch, 21, 0.6);
  const auto tr = random_traj(5, 3, 1, 4);
  const auto est = compute_advantages(tr, w, 0.95, 3);
  const LossConfig cfg;
  auto frozen_loss = [&](const ModelParams& v) {
    double s = 0.0;
    for (std::size_t t = 0; t < tr.size(); ++t) {
      const auto p = forward_actor(v, tr[t].obs);
      const double lp = std::log(p[static_cast<std::size_t>(tr[t].action[0])]);
      const double h = -(p[0] * std::log(p[0]) + p[1] * std::log(p[1]));
      const double d = est.targets[t] - forward_critic(v, tr[t].obs);
      s += -lp * est.advantages[t] + 0.5 * d * d - 0.01 * h;
    }
    return s / static_cast<double>(tr.size());
  };
  auto flat = w.flatten();
  std::vector<double> fd(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double x = flat[i];
    flat[i] = x + 1e-5;
    const double up = frozen_loss(ModelParams::unflatten(arch, flat));
    flat[i] = x - 1e-5;
    const double dn = frozen_loss(ModelParams::unflatten(arch, flat));
    flat[i] = x;
    fd[i] = (up - dn) / 2e-5;
  }
  const auto g = loss_gradient(w, tr, 0.95, 3, cfg, GradientMode::semi);
  EXPECT_LE(max_rel_err(g.flatten(), fd), 1e-4);
}

TEST(Update, ZeroLearningRateLeavesParams) {
  const auto arch = small_arch();
  const auto w = random_params(arch, 3);
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.rollout_length = 4;
  Learner l(w, cfg, 1);
  for (const auto& x : random_traj(9, 3, 1, 2)) l.record(x);
  l.flush();
  EXPECT_EQ(l.params(), w);
}

TEST(Update, SingleStepEqualsLrTimesGradient) {
  const auto arch = small_arch();
  const auto w = random_params(arch, 4);
  const auto tr = random_traj(1, 3, 1, 6);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.rollout_length = 1;
  cfg.minibatch_size = 1;
  Learner l(w, cfg, 1);
  l.record(tr[0]);
  const auto est = compute_advantages(tr, w, cfg.gamma, cfg.horizon);
  // Finite-difference gradient of the frozen single-step surrogate.
  auto f = [&](const ModelParams& v) {
    const auto p = forward_actor(v, tr[0].obs);
    const double h = -(p[0] * std::log(p[0]) + p[1] * std::log(p[1]));
    const double d = est.targets[0] - forward_critic(v, tr[0].obs);
    return -std::log(p[static_cast<std::size_t>(tr[0].action[0])]) * est.advantages[0] + 0.5 * d * d - 0.01 * h;
  };
  auto flat = w.flatten();
  const auto after = l.params().flatten();
  std::vector<double> delta(flat.size()), expect(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double x = flat[i];
    flat[i] = x + 1e-5;
    const double up = f(ModelParams::unflatten(arch, flat));
    flat[i] = x - 1e-5;
    const double dn = f(ModelParams::unflatten(arch, flat));
    flat[i] = x;
    expect[i] = -cfg.lr * (up - dn) / 2e-5;
    delta[i] = after[i] - flat[i];
  }
  EXPECT_LE(max_rel_err(delta, expect), 1e-4);
}

TEST(Update, PositiveAdvantageRaisesLogProbability) {
  const auto arch = small_arch();
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto w = random_params(arch, seed);
    std::fill(w.critic.begin(), w.critic.end(), 0.0);  // V = 0 so A = r
    RngStream rng(seed, 5);
    const std::vector<double> obs{rng.uniform(), rng.uniform(), rng.uniform()};
    const int a = rng.bernoulli(0.5) ? 1 : 0;
    Transition tr{obs, {a}, 1.0, obs};
    TrainConfig cfg;
    cfg.lr = 1e-4;
    cfg.horizon = 1;
    cfg.rollout_length = 1;
    cfg.loss.entropy = false;
    Learner l(w, cfg, 1);
    const double before = std::log(forward_actor(w, obs)[static_cast<std::size_t>(a)]);
    l.record(tr);
    const double after = std::log(forward_actor(l.params(), obs)[static_cast<std::size_t>(a)]);
    EXPECT_GT(after, before) << "seed " << seed;
  }
}

namespace {

// Two-state toy environment with deterministic dynamics.
struct ToyEnv {
  double s = 0.0;
  std::vector<double> observe() const { return {s, 1.0 - s, 0.5}; }
  double step(int a) {
    s = a == 1 ? 1.0 - s : s;
    return s > 0.5 ? -1.0 : 0.0;
  }
};

}  // namespace

TEST(LocalTrain, DeterministicAndPure) {
  const auto arch = small_arch();
  const auto w = init_params(arch, 7);
  TrainConfig cfg;
  cfg.lr = 1e-2;
  cfg.rollout_length = 5;
  cfg.minibatch_size = 5;
  ToyEnv e1, e2;
  const auto a = local_train(w, e1, 23, cfg, 99);
  const auto b = local_train(w, e2, 23, cfg, 99);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.trajectory.size(), 23u);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_NE(a.params, w);

  cfg.lr = 0.0;
  ToyEnv e3;
  const auto c = local_train(w, e3, 10, cfg, 99);
  EXPECT_EQ(c.params, w);
  EXPECT_EQ(c.trajectory.size(), 10u);
}

TEST(Params, FlattenRoundTrip) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto arch = small_arch(2 + seed % 4, {3 + seed % 5, 2}, nn::Activation::relu, 1 + seed % 3);
    const auto w = random_params(arch, seed);
    const auto flat = w.flatten();
    EXPECT_EQ(ModelParams::unflatten(arch, flat), w);
    EXPECT_EQ(ModelParams::unflatten(arch, flat).flatten(), flat);
  }
  EXPECT_THROW(ModelParams::unflatten(small_arch(), std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(Params, InitIsSeededAndSized) {
  const ArchSpec arch;
  const auto a = init_params(arch, 1), b = init_params(arch, 1), c = init_params(arch, 2);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  // 6 -> 64 -> 64 -> 2 and 6 -> 64 -> 64 -> 1
  EXPECT_EQ(a.actor.size(), 6u * 64 + 64 + 64u * 64 + 64 + 64u * 2 + 2);
  EXPECT_EQ(a.critic.size(), 6u * 64 + 64 + 64u * 64 + 64 + 64u + 1);
}

TEST(Checkpoint, RoundTripIsExact) {
  const auto arch = small_arch(6, {8, 8}, nn::Activation::relu, 2);
  Checkpoint c{random_params(arch, 3), 42, 17};
  c.params.actor[0] = -0.0;
  c.params.critic[1] = 1e-310;
  const auto bytes = encode_checkpoint(c);
  const auto d = decode_checkpoint(bytes);
  EXPECT_EQ(d.params, c.params);
  EXPECT_EQ(d.seed, 42u);
  EXPECT_EQ(d.round, 17u);
  EXPECT_TRUE(std::signbit(d.params.actor[0]));

  const auto path = (std::filesystem::temp_directory_path() / "hfrl_ckpt_test.ckpt").string();
  save_checkpoint(path, c);
  EXPECT_EQ(load_checkpoint(path).params.flatten(), c.params.flatten());
  std::filesystem::remove(path);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
}
