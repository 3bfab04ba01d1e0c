#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfrl/rl/actor_critic.hpp"

namespace hfrl::rl {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw std::invalid_argument("unknown optimizer '" + s + "'");
}

inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

struct TrainConfig {
  double lr = 1e-4;
  double gamma = 0.99;
  std::size_t horizon = 5;          // K-step bootstrap
  std::size_t rollout_length = 20;  // steps collected between updates
  std::size_t minibatch_size = 20;
  std::size_t epochs = 1;           // passes over each rollout fragment
  OptimizerKind optimizer = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;           // global-norm clip, 0 disables
  bool normalize_advantages = false;  // center and scale advantages per fragment
  LossConfig loss;

  void validate() const {
    if (!(lr >= 0.0)) throw std::invalid_argument("train: lr must be >= 0");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("train: gamma must be in (0, 1)");
    if (horizon < 1 || rollout_length < 1 || minibatch_size < 1 || epochs < 1)
      throw std::invalid_argument("train: horizon, rollout_length, minibatch_size and epochs must be >= 1");
  }
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// First-order optimizer over the flat (actor, critic) parameter layout.
class Optimizer {
 public:
  Optimizer() = default;
  Optimizer(const TrainConfig& cfg, std::size_t n) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

  // params <- params - lr * step(grad)
  void apply(ModelParams& w, const LossGradient& g) {
    std::vector<double> grad = g.flatten();
    if (cfg_.grad_clip > 0.0) {
      double norm = 0.0;
      for (double x : grad) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > cfg_.grad_clip)
        for (double& x : grad) x *= cfg_.grad_clip / norm;
    }
    std::vector<double*> dst;
    dst.reserve(grad.size());
    for (double& x : w.actor) dst.push_back(&x);
    for (double& x : w.critic) dst.push_back(&x);
    if (cfg_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < grad.size(); ++i) *dst[i] -= cfg_.lr * grad[i];
      return;
    }
    ++t_;
    const double b1 = cfg_.adam_beta1, b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = b1 * m_[i] + (1.0 - b1) * grad[i];
      v_[i] = b2 * v_[i] + (1.0 - b2) * grad[i] * grad[i];
      *dst[i] -= cfg_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + cfg_.adam_eps);
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<double> m_, v_;
  std::uint64_t t_ = 0;
};

// Per-agent A2C learner: samples actions from its own seeded stream, buffers
// transitions and runs an update after every `rollout_length` steps.
class Learner {
 public:
  Learner(ModelParams params, TrainConfig cfg, std::uint64_t seed)
      : params_(std::move(params)), cfg_(cfg), opt_(cfg, params_.size()), rng_(seed) {
    cfg_.validate();
  }

  const ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }

  // Replaces the model (e.g. with an aggregate from the server). Optimizer
  // moments are kept local to the agent.
  void set_params(ModelParams p) {
    if (p.size() != params_.size()) throw std::invalid_argument("learner: parameter size changed");
    params_ = std::move(p);
    fragment_.clear();
  }

  std::vector<int> act(std::span<const double> obs, bool greedy = false) {
    return sample_action(forward_actor(params_, obs), rng_, greedy);
  }

  // Records a transition; updates once the fragment is full.
  void record(Transition tr) {
    push(std::move(tr));
    if (full()) flush();
  }

  // Buffers without updating, for callers that schedule updates themselves.
  void push(Transition tr) { fragment_.push_back(std::move(tr)); }
  bool full() const { return fragment_.size() >= cfg_.rollout_length; }

  // Updates on whatever is buffered.
  void flush() {
    if (fragment_.empty()) return;
    update(fragment_);
    fragment_.clear();
  }

  // Advantages computed once under the current critic, then `epochs` passes
  // of minibatch steps in trajectory order.
  void update(const Trajectory& frag) {
    if (cfg_.lr == 0.0) return;
    auto est = compute_advantages(frag, params_, cfg_.gamma, cfg_.horizon);
    if (cfg_.normalize_advantages) normalize(est.advantages);
    std::vector<std::size_t> idx(frag.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t e = 0; e < cfg_.epochs; ++e)
      for (std::size_t b = 0; b < idx.size(); b += cfg_.minibatch_size) {
        const std::size_t end = std::min(idx.size(), b + cfg_.minibatch_size);
        std::span<const std::size_t> batch(idx.data() + b, end - b);
        const auto g = frozen_gradient(params_, frag, batch, est.advantages, est.targets, cfg_.loss);
        opt_.apply(params_, g);
        if (!params_.all_finite())
          throw DivergenceError("learner: non-finite parameters after update (lr=" + std::to_string(cfg_.lr) + ")");
      }
  }

 private:
  static void normalize(std::vector<double>& a) {
    const double n = static_cast<double>(a.size());
    const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
    double var = 0.0;
    for (double x : a) var += (x - mean) * (x - mean);
    const double sd = std::sqrt(var / n);
    for (double& x : a) x = (x - mean) / (sd + 1e-8);
  }

  ModelParams params_;
  TrainConfig cfg_;
  Optimizer opt_;
  RngStream rng_;
  Trajectory fragment_;
};

// Single-agent environment: observe() gives the current state, step(action)
// applies one binary action and returns the reward.
template <class E>
concept SingleAgentEnv = requires(E env, int a) {
  { env.observe() } -> std::convertible_to<std::vector<double>>;
  { env.step(a) } -> std::convertible_to<double>;
};

struct LocalTrainResult {
  ModelParams params;
  Trajectory trajectory;
  double loss = 0.0;
};

// Runs `steps` environment steps with on-policy A2C updates and returns the
// updated parameters, the full trajectory and its scalar loss under the new
// parameters.
template <SingleAgentEnv Env>
LocalTrainResult local_train(const ModelParams& w, Env& env, std::size_t steps, const TrainConfig& cfg,
                             std::uint64_t seed) {
  if (steps == 0) throw std::invalid_argument("local_train: steps must be >= 1");
  Learner learner(w, cfg, seed);
  Trajectory traj;
  traj.reserve(steps);
  std::vector<double> obs = env.observe();
  for (std::size_t t = 0; t < steps; ++t) {
    const auto action = learner.act(obs);
    const double r = env.step(action[0]);
    std::vector<double> next = env.observe();
    Transition tr{obs, action, r, next};
    traj.push_back(tr);
    learner.record(std::move(tr));
    obs = std::move(next);
  }
  learner.flush();
  LocalTrainResult res{learner.params(), std::move(traj), 0.0};
  res.loss = scalar_loss(res.params, res.trajectory, cfg.gamma, cfg.horizon, cfg.loss);
  return res;
}

}  // namespace hfrl::rl
