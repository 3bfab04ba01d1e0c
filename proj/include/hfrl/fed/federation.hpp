#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfrl/fed/kmeans.hpp"
#include "hfrl/rl/actor_critic.hpp"

namespace hfrl::fed {

using rl::ModelParams;

enum class Method { fedavg, cluster, fomo, none };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::fedavg: return "fedavg";
    case Method::cluster: return "cluster";
    case Method::fomo: return "fomo";
    case Method::none: return "none";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "fedavg") return Method::fedavg;
  if (s == "cluster") return Method::cluster;
  if (s == "fomo") return Method::fomo;
  if (s == "none") return Method::none;
  throw std::invalid_argument("unknown federation method '" + s + "'");
}

namespace detail {

inline void check_same_dims(std::span<const ModelParams> uploads) {
  if (uploads.empty()) throw std::invalid_argument("aggregate: no uploads");
  for (const auto& u : uploads)
    if (u.actor.size() != uploads[0].actor.size() || u.critic.size() != uploads[0].critic.size())
      throw std::invalid_argument("aggregate: parameter dimensions differ across uploads");
}

inline void mean_into(std::vector<double>& out, std::span<const ModelParams> uploads, std::span<const std::size_t> members,
                      std::vector<double> ModelParams::*part) {
  out.assign((uploads[members[0]].*part).size(), 0.0);
  for (std::size_t m : members) {
    const auto& v = uploads[m].*part;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += v[i];
  }
  const double n = static_cast<double>(members.size());
  for (double& x : out) x /= n;
}

inline ModelParams mean_of(std::span<const ModelParams> uploads, std::span<const std::size_t> members) {
  ModelParams out{uploads[members[0]].arch, {}, {}};
  mean_into(out.actor, uploads, members, &ModelParams::actor);
  mean_into(out.critic, uploads, members, &ModelParams::critic);
  return out;
}

}  // namespace detail

// Element-wise unweighted mean of all uploads.
inline ModelParams fedavg_aggregate(std::span<const ModelParams> uploads) {
  detail::check_same_dims(uploads);
  std::vector<std::size_t> all(uploads.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return detail::mean_of(uploads, all);
}

// Each agent receives the mean of its cluster; singletons keep their own model.
inline std::vector<ModelParams> cluster_aggregate(const ClusterAssignment& a, std::span<const ModelParams> uploads) {
  detail::check_same_dims(uploads);
  if (a.labels.size() != uploads.size())
    throw std::invalid_argument("cluster_aggregate: " + std::to_string(uploads.size()) + " uploads but " +
                                std::to_string(a.labels.size()) + " labels");
  int k = 0;
  for (int l : a.labels) {
    if (l < 0) throw std::invalid_argument("cluster_aggregate: agent without a cluster label");
    k = std::max(k, l + 1);
  }
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < a.labels.size(); ++i) members[static_cast<std::size_t>(a.labels[i])].push_back(i);
  std::vector<ModelParams> means(members.size());
  for (std::size_t c = 0; c < members.size(); ++c)
    if (members[c].size() > 1) means[c] = detail::mean_of(uploads, members[c]);
  std::vector<ModelParams> out;
  out.reserve(uploads.size());
  for (std::size_t i = 0; i < uploads.size(); ++i) {
    const auto c = static_cast<std::size_t>(a.labels[i]);
    out.push_back(members[c].size() > 1 ? means[c] : uploads[i]);
  }
  return out;
}

struct ImportanceRow {
  std::vector<double> raw;         // rho_ni
  std::vector<double> normalized;  // rho*_ni
  bool fallback = false;           // no candidate improved: one-hot on self
};

inline double delta_norm(const ModelParams& a, const ModelParams& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.actor.size(); ++i) s += (a.actor[i] - b.actor[i]) * (a.actor[i] - b.actor[i]);
  for (std::size_t i = 0; i < a.critic.size(); ++i) s += (a.critic[i] - b.critic[i]) * (a.critic[i] - b.critic[i]);
  return std::sqrt(s);
}

// max(rho, 0) / sum max(rho, 0); one-hot on self_index when the sum is zero.
inline std::vector<double> normalize_importance(std::span<const double> raw, std::size_t self_index,
                                                bool* fallback = nullptr) {
  std::vector<double> out(raw.size(), 0.0);
  double total = 0.0;
  for (double r : raw) total += std::max(r, 0.0);
  if (fallback) *fallback = !(total > 0.0);
  if (!(total > 0.0)) {
    out.at(self_index) = 1.0;
    return out;
  }
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = std::max(raw[i], 0.0) / total;
  return out;
}

// Raw importance rho = -alpha (L(w_i) - L(w_prev)) / ||w_i - w_prev||,
// clipped at zero and normalized to sum to one. Candidates identical to
// w_prev get rho = 0. If nothing improves the row is one-hot on `self_index`.
inline ImportanceRow fomo_importance(std::size_t self_index, std::span<const ModelParams> candidates,
                                     const ModelParams& w_prev, const std::function<double(const ModelParams&)>& loss,
                                     double alpha) {
  if (!(alpha > 0.0)) throw std::invalid_argument("fomo_importance: alpha must be positive");
  if (self_index >= candidates.size()) throw std::invalid_argument("fomo_importance: self index out of range");
  for (const auto& c : candidates)
    if (c.actor.size() != w_prev.actor.size() || c.critic.size() != w_prev.critic.size())
      throw std::invalid_argument("fomo_importance: dimension mismatch");
  const double base = loss(w_prev);
  ImportanceRow row;
  row.raw.resize(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const double norm = delta_norm(candidates[i], w_prev);
    if (norm == 0.0) {
      row.raw[i] = 0.0;
      continue;
    }
    row.raw[i] = -alpha * (loss(candidates[i]) - base) / norm;
  }
  row.normalized = normalize_importance(row.raw, self_index, &row.fallback);
  return row;
}

// w_prev + sum_i rho_i (w_i - w_prev), evaluated as
// (1 - sum rho) w_prev + sum rho_i w_i so a normalized row reproduces the
// convex combination exactly.
inline ModelParams fomo_update(const ModelParams& w_prev, std::span<const ModelParams> candidates,
                               std::span<const double> row) {
  if (row.size() != candidates.size()) throw std::invalid_argument("fomo_update: row size mismatch");
  double s = 0.0;
  for (double r : row) s += r;
  const double keep = 1.0 - s;
  auto combine = [&](std::vector<double> ModelParams::*part) {
    const auto& prev = w_prev.*part;
    std::vector<double> out(prev.size());
    for (std::size_t k = 0; k < out.size(); ++k) {
      double acc = keep == 0.0 ? 0.0 : keep * prev[k];
      for (std::size_t i = 0; i < candidates.size(); ++i)
        if (row[i] != 0.0) acc += row[i] * (candidates[i].*part)[k];
      out[k] = acc;
    }
    return out;
  };
  return {w_prev.arch, combine(&ModelParams::actor), combine(&ModelParams::critic)};
}

struct Upload {
  ModelParams params;
  const rl::Trajectory* trajectory = nullptr;  // agent's held evaluation batch
  double loss = 0.0;
};

struct LossOracleConfig {
  double gamma = 0.99;
  std::size_t horizon = 5;
  rl::LossConfig loss;
};

struct FederationRound {
  std::uint64_t round = 1;
  Method method = Method::fedavg;
  std::vector<Upload> uploads;
  std::vector<ModelParams> previous;  // w_n^{t-1}: model each agent started the round from
  std::size_t clusters = 4;
  double alpha = 1.0;
  std::uint64_t seed = 0;
  LossOracleConfig oracle;
  bool standardize_features = true;
};

struct RoundDiagnostics {
  std::uint64_t round = 0;
  Method method = Method::none;
  std::vector<double> losses;
  std::vector<std::vector<double>> importance;      // rho* rows (fomo)
  std::vector<std::vector<double>> raw_importance;  // rho rows (fomo)
  std::vector<bool> fallback;
  std::vector<int> labels;                          // cluster labels (cluster)
  double wcss = 0.0;
  std::vector<double> upload_norms;
  std::vector<double> output_norms;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["round"] = round;
    j["method"] = to_string(method);
    j["losses"] = losses;
    j["uploads"] = losses.size();
    if (method == Method::fomo) {
      j["importance"] = importance;
      j["raw_importance"] = raw_importance;
      std::vector<int> fb(fallback.begin(), fallback.end());
      j["fallback"] = fb;
    }
    if (method == Method::cluster) {
      j["labels"] = labels;
      j["wcss"] = wcss;
    }
    j["upload_norms"] = upload_norms;
    j["output_norms"] = output_norms;
    return j;
  }
};

struct RoundResult {
  std::vector<ModelParams> params;
  RoundDiagnostics diagnostics;
};

inline double l2_norm(const ModelParams& p) {
  double s = 0.0;
  for (double x : p.actor) s += x * x;
  for (double x : p.critic) s += x * x;
  return std::sqrt(s);
}

// Parallel map hook: called as for_each(n, fn) and must invoke fn(i) once
// for every i in [0, n). Outputs are written by index so the result does not
// depend on the execution order.
using ParallelFor = std::function<void(std::size_t, const std::function<void(std::size_t)>&)>;

inline void serial_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

inline RoundResult run_round(const FederationRound& r, const ParallelFor& pfor = serial_for) {
  const std::size_t N = r.uploads.size();
  if (N == 0) throw std::invalid_argument("run_round: no uploads");
  std::vector<ModelParams> uploads;
  uploads.reserve(N);
  for (const auto& u : r.uploads) uploads.push_back(u.params);
  detail::check_same_dims(uploads);

  RoundResult res;
  auto& d = res.diagnostics;
  d.round = r.round;
  d.method = r.method;
  for (const auto& u : r.uploads) {
    d.losses.push_back(u.loss);
    d.upload_norms.push_back(l2_norm(u.params));
  }

  switch (r.method) {
    case Method::none:
      res.params = uploads;
      break;
    case Method::fedavg:
      res.params.assign(N, fedavg_aggregate(uploads));
      break;
    case Method::cluster: {
      std::vector<Point> features;
      features.reserve(N);
      for (const auto& u : uploads) features.push_back(u.flatten());
      if (r.standardize_features) features = standardize(features);
      const auto a = kmeans_cluster(features, std::min(r.clusters, N), r.seed);
      d.labels = a.labels;
      d.wcss = a.wcss;
      res.params = cluster_aggregate(a, uploads);
      break;
    }
    case Method::fomo: {
      if (r.previous.size() != N) throw std::invalid_argument("run_round: fomo needs every agent's previous model");
      for (std::size_t n = 0; n < N; ++n)
        if (r.uploads[n].trajectory == nullptr || r.uploads[n].trajectory->empty())
          throw std::invalid_argument("run_round: fomo needs each agent's evaluation trajectory");
      d.importance.resize(N);
      d.raw_importance.resize(N);
      std::vector<char> fb(N, 0);
      res.params.resize(N);
      pfor(N, [&](std::size_t n) {
        const auto& traj = *r.uploads[n].trajectory;
        auto oracle = [&](const ModelParams& w) {
          return rl::scalar_loss(w, traj, r.oracle.gamma, r.oracle.horizon, r.oracle.loss);
        };
        auto row = fomo_importance(n, uploads, r.previous[n], oracle, r.alpha);
        res.params[n] = fomo_update(r.previous[n], uploads, row.normalized);
        d.raw_importance[n] = std::move(row.raw);
        d.importance[n] = std::move(row.normalized);
        fb[n] = row.fallback ? 1 : 0;
      });
      d.fallback.assign(fb.begin(), fb.end());
      break;
    }
  }
  for (const auto& p : res.params) d.output_norms.push_back(l2_norm(p));
  return res;
}

}  // namespace hfrl::fed
