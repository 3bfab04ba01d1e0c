#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hfrl/rng.hpp"

namespace hfrl::fed {

using Point = std::vector<double>;

struct ClusterAssignment {
  std::size_t k = 0;                // non-empty clusters
  std::vector<int> labels;          // per point, canonical numbering
  std::vector<Point> centroids;     // per cluster
  double wcss = 0.0;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Within-cluster sum of squares of a labelling, with centroids recomputed
// as member means.
inline double wcss_of(std::span<const Point> points, std::span<const int> labels) {
  int k = 0;
  for (int l : labels) k = std::max(k, l + 1);
  std::vector<Point> c(static_cast<std::size_t>(k), Point(points.empty() ? 0 : points[0].size(), 0.0));
  std::vector<std::size_t> n(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& ci = c[static_cast<std::size_t>(labels[i])];
    for (std::size_t d = 0; d < ci.size(); ++d) ci[d] += points[i][d];
    ++n[static_cast<std::size_t>(labels[i])];
  }
  for (std::size_t j = 0; j < c.size(); ++j)
    if (n[j] > 0)
      for (double& x : c[j]) x /= static_cast<double>(n[j]);
  double s = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) s += squared_distance(points[i], c[static_cast<std::size_t>(labels[i])]);
  return s;
}

// Renumbers clusters in order of their smallest member index and drops
// empty ones.
inline ClusterAssignment canonicalize(std::span<const Point> points, std::span<const int> labels) {
  ClusterAssignment out;
  std::vector<int> remap;
  out.labels.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int l = labels[i];
    if (l >= static_cast<int>(remap.size())) remap.resize(static_cast<std::size_t>(l) + 1, -1);
    if (remap[static_cast<std::size_t>(l)] < 0) remap[static_cast<std::size_t>(l)] = static_cast<int>(out.k++);
    out.labels[i] = remap[static_cast<std::size_t>(l)];
  }
  const std::size_t dim = points.empty() ? 0 : points[0].size();
  out.centroids.assign(out.k, Point(dim, 0.0));
  std::vector<std::size_t> n(out.k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto& c = out.centroids[static_cast<std::size_t>(out.labels[i])];
    for (std::size_t d = 0; d < dim; ++d) c[d] += points[i][d];
    ++n[static_cast<std::size_t>(out.labels[i])];
  }
  for (std::size_t j = 0; j < out.k; ++j)
    for (double& x : out.centroids[j]) x /= static_cast<double>(n[j]);
  out.wcss = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i)
    out.wcss += squared_distance(points[i], out.centroids[static_cast<std::size_t>(out.labels[i])]);
  return out;
}

struct LloydResult {
  std::vector<int> labels;
  std::vector<double> wcss_trace;  // after each assignment step
  std::size_t iterations = 0;
};

// Lloyd's iterations from the given centers until the assignment is a fixed
// point or max_iter is reached. An empty cluster takes the point farthest
// from its centroid in the largest cluster; when that cluster has no spread
// the empty cluster is left empty.
inline LloydResult lloyd(std::span<const Point> points, std::vector<Point> centers, std::size_t max_iter = 100) {
  const std::size_t N = points.size(), K = centers.size(), dim = points[0].size();
  LloydResult res;
  res.labels.assign(N, -1);
  for (std::size_t it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < N; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < K; ++j) {
        const double d = squared_distance(points[i], centers[j]);
        if (d < bd) {
          bd = d;
          best = static_cast<int>(j);
        }
      }
      if (res.labels[i] != best) {
        res.labels[i] = best;
        changed = true;
      }
    }
    // repair empty clusters
    std::vector<std::size_t> count(K, 0);
    for (int l : res.labels) ++count[static_cast<std::size_t>(l)];
    for (std::size_t j = 0; j < K; ++j) {
      if (count[j] > 0) continue;
      const auto largest = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
      if (count[largest] < 2) continue;
      std::size_t far = N;
      double fd = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        if (res.labels[i] != static_cast<int>(largest)) continue;
        const double d = squared_distance(points[i], centers[largest]);
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      if (far == N) continue;
      res.labels[far] = static_cast<int>(j);
      --count[largest];
      ++count[j];
      changed = true;
    }
    // update step
    for (std::size_t j = 0; j < K; ++j) {
      if (count[j] == 0) continue;
      std::fill(centers[j].begin(), centers[j].end(), 0.0);
    }
    for (std::size_t i = 0; i < N; ++i) {
      auto& c = centers[static_cast<std::size_t>(res.labels[i])];
      for (std::size_t d = 0; d < dim; ++d) c[d] += points[i][d];
    }
    double w = 0.0;
    for (std::size_t j = 0; j < K; ++j)
      if (count[j] > 0)
        for (double& x : centers[j]) x /= static_cast<double>(count[j]);
    for (std::size_t i = 0; i < N; ++i) w += squared_distance(points[i], centers[static_cast<std::size_t>(res.labels[i])]);
    res.wcss_trace.push_back(w);
    res.iterations = it + 1;
    if (!changed && it > 0) break;
  }
  return res;
}

// Greedy farthest-point seeding: the first center is drawn from the stream,
// each next one is the point farthest from the chosen set (lowest index on ties).
inline std::vector<Point> farthest_point_seeds(std::span<const Point> points, std::size_t K, RngStream& rng) {
  std::vector<Point> centers;
  centers.push_back(points[rng.index(points.size())]);
  std::vector<double> dmin(points.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < K) {
    std::size_t best = 0;
    double bd = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      dmin[i] = std::min(dmin[i], squared_distance(points[i], centers.back()));
      if (dmin[i] > bd) {
        bd = dmin[i];
        best = i;
      }
    }
    centers.push_back(points[best]);
  }
  return centers;
}

// Single-point transfers (Hartigan) from a Lloyd fixed point: move point i
// from cluster a to b when n_b/(n_b+1) d_b < n_a/(n_a-1) d_a. Each move
// strictly lowers WCSS, so the loop terminates.
inline void refine_transfers(std::span<const Point> points, std::vector<int>& labels, std::size_t K) {
  const std::size_t N = points.size(), dim = points[0].size();
  std::vector<Point> sum(K, Point(dim, 0.0));
  std::vector<std::size_t> count(K, 0);
  for (std::size_t i = 0; i < N; ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++count[c];
    for (std::size_t d = 0; d < dim; ++d) sum[c][d] += points[i][d];
  }
  auto dist_to = [&](std::size_t i, std::size_t c) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double x = points[i][d] - sum[c][d] / static_cast<double>(count[c]);
      s += x * x;
    }
    return s;
  };
  for (bool moved = true; moved;) {
    moved = false;
    for (std::size_t i = 0; i < N; ++i) {
      const auto a = static_cast<std::size_t>(labels[i]);
      if (count[a] < 2) continue;
      const double na = static_cast<double>(count[a]);
      const double out = na / (na - 1.0) * dist_to(i, a);
      std::size_t best = a;
      double gain = 0.0;
      for (std::size_t b = 0; b < K; ++b) {
        if (b == a) continue;
        const double nb = static_cast<double>(count[b]);
        const double in = count[b] == 0 ? 0.0 : nb / (nb + 1.0) * dist_to(i, b);
        if (out - in > gain + 1e-12 * (1.0 + out)) {
          gain = out - in;
          best = b;
        }
      }
      if (best == a) continue;
      --count[a];
      ++count[best];
      for (std::size_t d = 0; d < dim; ++d) {
        sum[a][d] -= points[i][d];
        sum[best][d] += points[i][d];
      }
      labels[i] = static_cast<int>(best);
      moved = true;
    }
  }
}

// D^2-weighted seeding: each next center is drawn with probability
// proportional to its squared distance from the chosen set.
inline std::vector<Point> d2_seeds(std::span<const Point> points, std::size_t K, RngStream& rng) {
  std::vector<Point> centers;
  centers.push_back(points[rng.index(points.size())]);
  std::vector<double> dmin(points.size(), std::numeric_limits<double>::infinity());
  while (centers.size() < K) {
    double total = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      dmin[i] = std::min(dmin[i], squared_distance(points[i], centers.back()));
      total += dmin[i];
    }
    if (!(total > 0.0)) {
      centers.push_back(centers.back());
      continue;
    }
    centers.push_back(points[rng.categorical(dmin)]);
  }
  return centers;
}

struct KMeansOptions {
  std::size_t restarts = 10;
  std::size_t max_iter = 100;
};

// Best of `restarts` seeded Lloyd runs by WCSS, canonically labelled. The
// first restart seeds greedily by farthest point, the rest by D^2 sampling.
inline ClusterAssignment kmeans_cluster(std::span<const Point> points, std::size_t K, std::uint64_t seed,
                                        const KMeansOptions& opt = {}) {
  const std::size_t N = points.size();
  if (N == 0) throw std::invalid_argument("kmeans: no points");
  if (K < 1) throw std::invalid_argument("kmeans: K must be >= 1");
  if (K > N) throw std::invalid_argument("kmeans: K=" + std::to_string(K) + " exceeds N=" + std::to_string(N));
  for (const auto& p : points)
    if (p.size() != points[0].size()) throw std::invalid_argument("kmeans: dimension mismatch");
  ClusterAssignment best;
  bool have = false;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, opt.restarts); ++r) {
    RngStream rng(seed, r);
    auto seeds = r == 0 ? farthest_point_seeds(points, K, rng) : d2_seeds(points, K, rng);
    auto res = lloyd(points, std::move(seeds), opt.max_iter);
    refine_transfers(points, res.labels, K);
    auto a = canonicalize(points, res.labels);
    if (!have || a.wcss < best.wcss) {
      best = std::move(a);
      have = true;
    }
  }
  return best;
}

// Per-coordinate z-scores across the rows; constant coordinates map to 0.
inline std::vector<Point> standardize(std::span<const Point> rows) {
  std::vector<Point> out(rows.begin(), rows.end());
  if (rows.empty()) return out;
  const std::size_t n = rows.size(), dim = rows[0].size();
  for (std::size_t d = 0; d < dim; ++d) {
    double mean = 0.0;
    for (const auto& r : rows) mean += r[d];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& r : rows) var += (r[d] - mean) * (r[d] - mean);
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) out[i][d] = sd > 1e-12 * (1.0 + std::abs(mean)) ? (rows[i][d] - mean) / sd : 0.0;
  }
  return out;
}

}  // namespace hfrl::fed
