#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfrl/nn/mlp.hpp"
#include "hfrl/rng.hpp"

namespace hfrl::rl {

// Network layout shared by every agent in a run. `heads` is the number of
// independent binary decisions (1 per intersection agent; N for the
// centralized controller).
struct ArchSpec {
  std::size_t obs_dim = 6;
  std::vector<std::size_t> hidden{64, 64};
  nn::Activation activation = nn::Activation::tanh;
  std::size_t heads = 1;

  nn::MlpShape actor_shape() const { return shape_with_output(2 * heads); }
  nn::MlpShape critic_shape() const { return shape_with_output(1); }

  bool operator==(const ArchSpec&) const = default;

 private:
  nn::MlpShape shape_with_output(std::size_t out) const {
    nn::MlpShape s;
    s.activation = activation;
    s.sizes.push_back(obs_dim);
    s.sizes.insert(s.sizes.end(), hidden.begin(), hidden.end());
    s.sizes.push_back(out);
    return s;
  }
};

// Actor parameters theta and critic parameters phi of one agent. The flat
// view is theta followed by phi.
struct ModelParams {
  ArchSpec arch;
  std::vector<double> actor;
  std::vector<double> critic;

  std::size_t size() const { return actor.size() + critic.size(); }

  std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(size());
    v.insert(v.end(), actor.begin(), actor.end());
    v.insert(v.end(), critic.begin(), critic.end());
    return v;
  }

  static ModelParams zeros(const ArchSpec& arch) {
    return {arch, std::vector<double>(arch.actor_shape().param_count(), 0.0),
            std::vector<double>(arch.critic_shape().param_count(), 0.0)};
  }

  static ModelParams unflatten(const ArchSpec& arch, std::span<const double> flat) {
    const std::size_t na = arch.actor_shape().param_count();
    const std::size_t nc = arch.critic_shape().param_count();
    if (flat.size() != na + nc)
      throw std::invalid_argument("unflatten: expected " + std::to_string(na + nc) + " values, got " +
                                  std::to_string(flat.size()));
    return {arch, {flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(na)},
            {flat.begin() + static_cast<std::ptrdiff_t>(na), flat.end()}};
  }

  bool all_finite() const {
    auto ok = [](const std::vector<double>& v) {
      return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
    };
    return ok(actor) && ok(critic);
  }

  bool operator==(const ModelParams&) const = default;
};

namespace detail {

inline void glorot_init(const nn::MlpShape& shape, std::vector<double>& p, RngStream& rng, double last_scale) {
  p.assign(shape.param_count(), 0.0);
  for (std::size_t l = 0; l < shape.layers(); ++l) {
    const std::size_t in = shape.sizes[l], out = shape.sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out)) * (l + 1 == shape.layers() ? last_scale : 1.0);
    double* W = p.data() + shape.offset(l);
    for (std::size_t k = 0; k < in * out; ++k) W[k] = rng.uniform(-bound, bound);
  }
}

}  // namespace detail

// Glorot-uniform weights, zero biases. The policy head starts near uniform.
inline ModelParams init_params(const ArchSpec& arch, std::uint64_t seed) {
  RngStream rng(seed, 0xA11CE);
  ModelParams p{arch, {}, {}};
  detail::glorot_init(arch.actor_shape(), p.actor, rng, 0.01);
  detail::glorot_init(arch.critic_shape(), p.critic, rng, 1.0);
  return p;
}

// Per-head softmax probabilities: {p_h(0), p_h(1)} for h = 0..heads-1.
inline std::vector<double> softmax_pairs(std::span<const double> logits) {
  std::vector<double> p(logits.size());
  for (std::size_t h = 0; h + 1 < logits.size(); h += 2) {
    const double m = std::max(logits[h], logits[h + 1]);
    const double e0 = std::exp(logits[h] - m), e1 = std::exp(logits[h + 1] - m);
    const double z = e0 + e1;
    p[h] = e0 / z;
    p[h + 1] = e1 / z;
  }
  return p;
}

inline std::vector<double> forward_actor(const ModelParams& w, std::span<const double> obs) {
  nn::MlpCache cache;
  return softmax_pairs(nn::forward(w.arch.actor_shape(), w.actor, obs, cache));
}

inline double forward_critic(const ModelParams& w, std::span<const double> obs) {
  nn::MlpCache cache;
  return nn::forward(w.arch.critic_shape(), w.critic, obs, cache)[0];
}

// Draws one binary action per head. Greedy mode takes the argmax, with ties
// going to action 0.
inline std::vector<int> sample_action(std::span<const double> probs, RngStream& rng, bool greedy = false) {
  std::vector<int> a(probs.size() / 2);
  for (std::size_t h = 0; h < a.size(); ++h) {
    const double p1 = probs[2 * h + 1];
    a[h] = greedy ? (p1 > probs[2 * h] ? 1 : 0) : (rng.uniform() < p1 ? 1 : 0);
  }
  return a;
}

struct Transition {
  std::vector<double> obs;
  std::vector<int> action;  // one entry per head
  double reward = 0.0;
  std::vector<double> next_obs;
};

using Trajectory = std::vector<Transition>;

struct AdvantageEstimate {
  std::vector<double> advantages;
  std::vector<double> targets;
  std::size_t horizon = 1;
  double gamma = 0.99;
};

namespace detail {

// Per step tau: values[tau] = V(obs_tau), boot[tau] = V(next_obs_tau).
struct CriticValues {
  std::vector<double> values;
  std::vector<double> boot;
};

inline CriticValues critic_values(const ModelParams& w, const Trajectory& traj) {
  CriticValues cv;
  cv.values.resize(traj.size());
  cv.boot.resize(traj.size());
  const auto shape = w.arch.critic_shape();
  nn::MlpCache cache;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    cv.values[t] = nn::forward(shape, w.critic, traj[t].obs, cache)[0];
    // Consecutive transitions share a state; skip the duplicate evaluation.
    if (t > 0 && traj[t - 1].next_obs == traj[t].obs) cv.boot[t - 1] = cv.values[t];
  }
  for (std::size_t t = 0; t < traj.size(); ++t) {
    if (t + 1 < traj.size() && traj[t].next_obs == traj[t + 1].obs) continue;
    cv.boot[t] = nn::forward(shape, w.critic, traj[t].next_obs, cache)[0];
  }
  return cv;
}

inline void check_horizon(std::size_t K, double gamma) {
  if (K < 1) throw std::invalid_argument("advantage: K must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("advantage: gamma must be in (0, 1)");
}

inline AdvantageEstimate advantages_from_values(const Trajectory& traj, const CriticValues& cv, double gamma,
                                                std::size_t K) {
  AdvantageEstimate est;
  est.horizon = K;
  est.gamma = gamma;
  const std::size_t T = traj.size();
  est.advantages.resize(T);
  est.targets.resize(T);
  for (std::size_t t = 0; t < T; ++t) {
    const std::size_t k = std::min(K, T - t);
    double g = 0.0, disc = 1.0;
    for (std::size_t i = 0; i < k; ++i) {
      g += disc * traj[t + i].reward;
      disc *= gamma;
    }
    g += disc * cv.boot[t + k - 1];
    est.targets[t] = g;
    est.advantages[t] = g - cv.values[t];
  }
  return est;
}

}  // namespace detail

// K-step advantage: sum_{i<k} gamma^i R_{t+i} + gamma^k V(s_{t+k}) - V(s_t),
// with k = min(K, steps remaining); the bootstrap state past the end of the
// trajectory is the final observed next state.
inline AdvantageEstimate compute_advantages(const Trajectory& traj, const ModelParams& w, double gamma, std::size_t K) {
  if (traj.empty()) throw std::invalid_argument("compute_advantages: empty trajectory");
  detail::check_horizon(K, gamma);
  return detail::advantages_from_values(traj, detail::critic_values(w, traj), gamma, K);
}

struct LossConfig {
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  bool entropy = true;

  double beta() const { return entropy ? entropy_coef : 0.0; }
};

namespace detail {

struct StepTerms {
  double log_pi = 0.0;
  double entropy = 0.0;
};

inline StepTerms policy_terms(std::span<const double> probs, std::span<const int> action) {
  StepTerms s;
  for (std::size_t h = 0; h < action.size(); ++h) {
    s.log_pi += std::log(probs[2 * h + static_cast<std::size_t>(action[h])]);
    for (int k = 0; k < 2; ++k) {
      const double p = probs[2 * h + static_cast<std::size_t>(k)];
      if (p > 0.0) s.entropy -= p * std::log(p);
    }
  }
  return s;
}

inline void check_actions(const ModelParams& w, const Transition& tr) {
  if (tr.action.size() != w.arch.heads) throw std::invalid_argument("trajectory: action count does not match heads");
  for (int a : tr.action)
    if (a != 0 && a != 1) throw std::invalid_argument("trajectory: actions must be 0 or 1");
}

}  // namespace detail

// Mean over steps of  -log pi(a|s) * A + c_v * (target - V(s))^2 - beta * H(pi(.|s)),
// with A and target recomputed under w's critic on the fixed trajectory.
inline double scalar_loss(const ModelParams& w, const Trajectory& traj, double gamma, std::size_t K,
                          const LossConfig& cfg = {}) {
  if (traj.empty()) throw std::invalid_argument("scalar_loss: empty trajectory");
  detail::check_horizon(K, gamma);
  const auto est = compute_advantages(traj, w, gamma, K);
  const auto cv = detail::critic_values(w, traj);
  const auto shape = w.arch.actor_shape();
  nn::MlpCache cache;
  double total = 0.0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    detail::check_actions(w, traj[t]);
    const auto probs = softmax_pairs(nn::forward(shape, w.actor, traj[t].obs, cache));
    const auto terms = detail::policy_terms(probs, traj[t].action);
    const double td = est.targets[t] - cv.values[t];
    total += -terms.log_pi * est.advantages[t] + cfg.value_coef * td * td - cfg.beta() * terms.entropy;
  }
  return total / static_cast<double>(traj.size());
}

struct LossGradient {
  double loss = 0.0;
  std::vector<double> actor;
  std::vector<double> critic;

  std::vector<double> flatten() const {
    std::vector<double> v(actor);
    v.insert(v.end(), critic.begin(), critic.end());
    return v;
  }
};

enum class GradientMode {
  full,  // exact derivative of scalar_loss, including through the bootstrapped targets
  semi,  // advantages and targets held fixed (the A2C update direction)
};

namespace detail {

inline void accumulate_actor(const ModelParams& w, const Transition& tr, double adv, double beta, double scale,
                             nn::MlpCache& cache, std::vector<double>& grad, double& loss) {
  const auto shape = w.arch.actor_shape();
  const auto logits = nn::forward(shape, w.actor, tr.obs, cache);
  const auto probs = softmax_pairs(logits);
  const auto terms = policy_terms(probs, tr.action);
  loss += scale * (-terms.log_pi * adv - beta * terms.entropy);
  std::vector<double> g(probs.size());
  for (std::size_t h = 0; h < tr.action.size(); ++h) {
    double H = 0.0;
    for (int k = 0; k < 2; ++k) {
      const double p = probs[2 * h + static_cast<std::size_t>(k)];
      if (p > 0.0) H -= p * std::log(p);
    }
    for (int k = 0; k < 2; ++k) {
      const std::size_t j = 2 * h + static_cast<std::size_t>(k);
      const double p = probs[j];
      const double onehot = tr.action[h] == k ? 1.0 : 0.0;
      // d(-log pi * A)/dz = -A (onehot - p);  d(-beta H)/dz = beta p (log p + H)
      const double ent = p > 0.0 ? beta * p * (std::log(p) + H) : 0.0;
      g[j] = scale * (-adv * (onehot - p) + ent);
    }
  }
  nn::backward(shape, w.actor, cache, g, grad);
}

inline void accumulate_critic(const ModelParams& w, std::span<const double> obs, double coef, nn::MlpCache& cache,
                              std::vector<double>& grad) {
  if (coef == 0.0) return;
  const auto shape = w.arch.critic_shape();
  nn::forward(shape, w.critic, obs, cache);
  const double g[1] = {coef};
  nn::backward(shape, w.critic, cache, g, grad);
}

}  // namespace detail

// Gradient of the surrogate over the selected steps with advantages and
// targets supplied by the caller (held constant). Used for minibatch updates.
inline LossGradient frozen_gradient(const ModelParams& w, const Trajectory& traj, std::span<const std::size_t> steps,
                                    std::span<const double> advantages, std::span<const double> targets,
                                    const LossConfig& cfg) {
  if (steps.empty()) throw std::invalid_argument("frozen_gradient: no steps");
  LossGradient out;
  out.actor.assign(w.actor.size(), 0.0);
  out.critic.assign(w.critic.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(steps.size());
  nn::MlpCache cache;
  for (std::size_t t : steps) {
    const auto& tr = traj[t];
    detail::check_actions(w, tr);
    detail::accumulate_actor(w, tr, advantages[t], cfg.beta(), scale, cache, out.actor, out.loss);
    const auto cshape = w.arch.critic_shape();
    const double v = nn::forward(cshape, w.critic, tr.obs, cache)[0];
    const double td = targets[t] - v;
    out.loss += scale * cfg.value_coef * td * td;
    const double g[1] = {-2.0 * cfg.value_coef * td * scale};
    nn::backward(cshape, w.critic, cache, g, out.critic);
  }
  return out;
}

// Gradient of scalar_loss over a whole trajectory.
inline LossGradient loss_gradient(const ModelParams& w, const Trajectory& traj, double gamma, std::size_t K,
                                  const LossConfig& cfg = {}, GradientMode mode = GradientMode::full) {
  if (traj.empty()) throw std::invalid_argument("loss_gradient: empty trajectory");
  detail::check_horizon(K, gamma);
  const auto cv = detail::critic_values(w, traj);
  const auto est = detail::advantages_from_values(traj, cv, gamma, K);
  std::vector<std::size_t> all(traj.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  if (mode == GradientMode::semi) return frozen_gradient(w, traj, all, est.advantages, est.targets, cfg);

  // Full derivative: l_t = -log pi_t * A_t + c_v A_t^2 - beta H_t with
  // A_t = G_t - V(s_t) and G_t depending on V(s_{t+k}) through the bootstrap.
  LossGradient out;
  out.actor.assign(w.actor.size(), 0.0);
  out.critic.assign(w.critic.size(), 0.0);
  const std::size_t T = traj.size();
  const double scale = 1.0 / static_cast<double>(T);
  nn::MlpCache cache;
  std::vector<double> coef_obs(T, 0.0), coef_boot(T, 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const auto& tr = traj[t];
    detail::check_actions(w, tr);
    const double adv = est.advantages[t];
    double dummy = 0.0;
    detail::accumulate_actor(w, tr, adv, cfg.beta(), scale, cache, out.actor, dummy);
    const auto probs = forward_actor(w, tr.obs);
    const auto terms = detail::policy_terms(probs, tr.action);
    out.loss += scale * (-terms.log_pi * adv + cfg.value_coef * adv * adv - cfg.beta() * terms.entropy);
    const double dl_da = scale * (-terms.log_pi + 2.0 * cfg.value_coef * adv);
    const std::size_t k = std::min(K, T - t);
    coef_obs[t] -= dl_da;
    coef_boot[t + k - 1] += dl_da * std::pow(gamma, static_cast<double>(k));
  }
  for (std::size_t t = 0; t < T; ++t) {
    detail::accumulate_critic(w, traj[t].obs, coef_obs[t], cache, out.critic);
    detail::accumulate_critic(w, traj[t].next_obs, coef_boot[t], cache, out.critic);
  }
  return out;
}

}  // namespace hfrl::rl
