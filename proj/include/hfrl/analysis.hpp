#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfrl/fed/kmeans.hpp"

namespace hfrl::analysis {

enum class Metric { cosine, neg_euclidean };

inline std::string to_string(Metric m) { return m == Metric::cosine ? "cosine" : "neg-euclidean"; }

inline Metric metric_from_string(const std::string& s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "neg-euclidean" || s == "neg_euclidean") return Metric::neg_euclidean;
  throw std::invalid_argument("unknown similarity metric '" + s + "'");
}

struct SimilarityMatrix {
  std::vector<std::vector<double>> values;
  Metric metric = Metric::cosine;
  std::uint64_t round = 0;
  std::vector<std::string> diagnostics;

  std::size_t size() const { return values.size(); }
  double operator()(std::size_t i, std::size_t j) const { return values[i][j]; }
};

// Pairwise similarity of per-agent parameter vectors. With `standardize`
// each coordinate is z-scored across agents first. Under cosine a zero
// vector has similarity 0 to every other agent.
inline SimilarityMatrix similarity(std::span<const std::vector<double>> params, Metric metric = Metric::cosine,
                                   bool standardize = true) {
  const std::size_t n = params.size();
  if (n < 2) throw std::invalid_argument("similarity: need at least two agents");
  for (const auto& p : params)
    if (p.size() != params[0].size()) throw std::invalid_argument("similarity: dimension mismatch");
  const auto x = standardize ? fed::standardize(params) : std::vector<std::vector<double>>(params.begin(), params.end());
  SimilarityMatrix s;
  s.metric = metric;
  s.values.assign(n, std::vector<double>(n, 0.0));
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = std::sqrt(std::inner_product(x[i].begin(), x[i].end(), x[i].begin(), 0.0));
    if (metric == Metric::cosine && norms[i] == 0.0)
      s.diagnostics.push_back("agent " + std::to_string(i) + " has a zero parameter vector; cosine set to 0");
  }
  for (std::size_t i = 0; i < n; ++i) {
    s.values[i][i] = metric == Metric::cosine ? 1.0 : 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      double v;
      if (metric == Metric::cosine) {
        v = (norms[i] == 0.0 || norms[j] == 0.0)
                ? 0.0
                : std::clamp(std::inner_product(x[i].begin(), x[i].end(), x[j].begin(), 0.0) / (norms[i] * norms[j]), -1.0, 1.0);
      } else {
        v = -std::sqrt(fed::squared_distance(x[i], x[j]));
      }
      s.values[i][j] = s.values[j][i] = v;
    }
  }
  return s;
}

// k most similar other agents, descending similarity, ties by ascending id.
inline std::vector<std::size_t> top_k_similar(const SimilarityMatrix& m, std::size_t agent, std::size_t k) {
  const std::size_t n = m.size();
  if (agent >= n) throw std::out_of_range("top_k_similar: unknown agent");
  if (k >= n) throw std::invalid_argument("top_k_similar: k must be smaller than the number of agents");
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < n; ++j)
    if (j != agent) others.push_back(j);
  std::stable_sort(others.begin(), others.end(),
                   [&](std::size_t a, std::size_t b) { return m(agent, a) > m(agent, b); });
  others.resize(k);
  return others;
}

struct Merge {
  std::size_t a = 0;  // cluster ids: 0..N-1 leaves, N+i the cluster formed by merge i
  std::size_t b = 0;
  double height = 0.0;
  std::size_t size = 0;
};

struct Dendrogram {
  std::size_t leaves = 0;
  std::vector<Merge> merges;
  std::string linkage = "average";
};

struct HierarchicalResult {
  Dendrogram dendrogram;
  std::vector<int> labels;
};

// Canonical labels after applying the first leaves - groups merges.
inline std::vector<int> cut_dendrogram(const Dendrogram& d, std::size_t groups) {
  const std::size_t n = d.leaves;
  if (groups < 1 || groups > n) throw std::invalid_argument("cut_dendrogram: groups must be in [1, N]");
  std::vector<std::size_t> parent(2 * n, 0);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < n - groups; ++i) {
    const auto& m = d.merges[i];
    parent[find(m.a)] = n + i;
    parent[find(m.b)] = n + i;
  }
  std::map<std::size_t, int> canon;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = find(i);
    auto it = canon.find(r);
    if (it == canon.end()) it = canon.emplace(r, static_cast<int>(canon.size())).first;
    labels[i] = it->second;
  }
  return labels;
}

// Agglomerative average linkage on distance = 1 - similarity. Ties between
// candidate pairs go to the lexicographically smallest cluster-id pair.
inline HierarchicalResult hierarchical_cluster(const SimilarityMatrix& m, std::size_t target_groups) {
  const std::size_t n = m.size();
  if (n == 0) throw std::invalid_argument("hierarchical_cluster: empty matrix");
  if (target_groups < 1 || target_groups > n)
    throw std::invalid_argument("hierarchical_cluster: target_groups=" + std::to_string(target_groups) +
                                " outside [1, " + std::to_string(n) + "]");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (!std::isfinite(m(i, j)) || std::abs(m(i, j) - m(j, i)) > 1e-12)
        throw std::invalid_argument("hierarchical_cluster: matrix must be finite and symmetric");

  struct Cluster {
    std::size_t id;
    std::vector<std::size_t> members;
  };
  std::vector<Cluster> active;
  for (std::size_t i = 0; i < n; ++i) active.push_back({i, {i}});
  auto avg_dist = [&](const Cluster& x, const Cluster& y) {
    double s = 0.0;
    for (auto i : x.members)
      for (auto j : y.members) s += 1.0 - m(i, j);
    return s / static_cast<double>(x.members.size() * y.members.size());
  };
  HierarchicalResult res;
  res.dendrogram.leaves = n;
  while (active.size() > 1) {
    std::size_t bi = 0, bj = 1;
    double best = std::numeric_limits<double>::infinity();
    std::pair<std::size_t, std::size_t> best_ids{0, 0};
    for (std::size_t i = 0; i < active.size(); ++i)
      for (std::size_t j = i + 1; j < active.size(); ++j) {
        const double d = avg_dist(active[i], active[j]);
        const std::pair<std::size_t, std::size_t> ids = std::minmax(active[i].id, active[j].id);
        if (d < best - 1e-15 || (std::abs(d - best) <= 1e-15 && ids < best_ids)) {
          best = d;
          bi = i;
          bj = j;
          best_ids = ids;
        }
      }
    Cluster merged{n + res.dendrogram.merges.size(), active[bi].members};
    merged.members.insert(merged.members.end(), active[bj].members.begin(), active[bj].members.end());
    res.dendrogram.merges.push_back({best_ids.first, best_ids.second, best, merged.members.size()});
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bj));
    active.erase(active.begin() + static_cast<std::ptrdiff_t>(bi));
    active.push_back(std::move(merged));
  }
  res.labels = cut_dendrogram(res.dendrogram, target_groups);
  return res;
}

// Symmetrized importance affinity (rho* + rho*^T) / 2 with unit diagonal,
// usable wherever a similarity matrix is expected.
inline SimilarityMatrix importance_affinity(const std::vector<std::vector<double>>& rho) {
  const std::size_t n = rho.size();
  SimilarityMatrix s;
  s.values.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) s.values[i][j] = i == j ? 1.0 : 0.5 * (rho[i][j] + rho[j][i]);
  return s;
}

struct Snapshot {
  std::uint64_t round = 0;
  std::string method;
  std::vector<int> labels;                      // cluster method
  std::vector<std::vector<double>> importance;  // fomo method
};

// Reads rounds.jsonl lines; `seed` filters multi-seed logs when given.
inline std::vector<nlohmann::json> read_rounds(const std::string& path, std::optional<std::uint64_t> seed = std::nullopt) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line);
    if (seed && j.contains("seed") && j["seed"].get<std::uint64_t>() != *seed) continue;
    out.push_back(std::move(j));
  }
  return out;
}

// Extracts canonical cluster labels and importance rows at the requested
// rounds, in the order requested.
inline std::vector<Snapshot> snapshot_series(const std::vector<nlohmann::json>& rounds,
                                             std::span<const std::uint64_t> wanted) {
  std::map<std::uint64_t, const nlohmann::json*> by_round;
  for (const auto& r : rounds) by_round[r.at("round").get<std::uint64_t>()] = &r;
  std::vector<Snapshot> out;
  for (auto t : wanted) {
    auto it = by_round.find(t);
    if (it == by_round.end()) {
      std::string avail;
      for (const auto& [k, v] : by_round) avail += (avail.empty() ? "" : ",") + std::to_string(k);
      throw std::out_of_range("round " + std::to_string(t) + " not in log; available rounds: " + avail);
    }
    const auto& j = *it->second;
    Snapshot s;
    s.round = t;
    s.method = j.value("method", "");
    if (j.contains("labels")) {
      const auto raw = j["labels"].get<std::vector<int>>();
      std::vector<fed::Point> dummy(raw.size(), fed::Point{});
      s.labels = fed::canonicalize(dummy, raw).labels;
    }
    if (j.contains("importance")) s.importance = j["importance"].get<std::vector<std::vector<double>>>();
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace hfrl::analysis
