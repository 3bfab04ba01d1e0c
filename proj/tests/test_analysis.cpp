#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "hfrl/analysis.hpp"

using namespace hfrl;
using namespace hfrl::analysis;

namespace {

SimilarityMatrix from_distances(const std::vector<std::vector<double>>& d) {
  SimilarityMatrix m;
  m.values = d;
  for (auto& row : m.values)
    for (double& x : row) x = 1.0 - x;
  return m;
}

}  // namespace

TEST(Similarity, CosineCases) {
  const std::vector<std::vector<double>> p{{1, 0}, {1, 1}, {0, 1}, {2, 2}};
  const auto s = similarity(p, Metric::cosine, false);
  EXPECT_NEAR(s(0, 1), 1.0 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(s(0, 2), 0.0, 1e-15);
  EXPECT_NEAR(s(1, 3), 1.0, 1e-15);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s(i, i), 1.0);
}

TEST(Similarity, ZeroVectorDiagnostic) {
  const std::vector<std::vector<double>> p{{0, 0}, {1, 1}};
  const auto s = similarity(p, Metric::cosine, false);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_EQ(s.diagnostics.size(), 1u);
  EXPECT_THROW(similarity(std::vector<std::vector<double>>{{1.0}}), std::invalid_argument);
  EXPECT_THROW(similarity(std::vector<std::vector<double>>{{1.0}, {1.0, 2.0}}), std::invalid_argument);
}

TEST(Similarity, SymmetricWithMaximalDiagonal) {
  RngStream rng(4);
  std::vector<std::vector<double>> p(7, std::vector<double>(20));
  for (auto& v : p)
    for (double& x : v) x = rng.normal();
  for (auto metric : {Metric::cosine, Metric::neg_euclidean}) {
    const auto s = similarity(p, metric);
    for (std::size_t i = 0; i < 7; ++i)
      for (std::size_t j = 0; j < 7; ++j) {
        EXPECT_EQ(s(i, j), s(j, i));
        EXPECT_LE(s(i, j), s(i, i) + 1e-12);
        EXPECT_TRUE(std::isfinite(s(i, j)));
      }
  }
  const auto e = similarity(std::vector<std::vector<double>>{{0, 0}, {3, 4}}, Metric::neg_euclidean, false);
  EXPECT_NEAR(e(0, 1), -5.0, 1e-15);
}

TEST(TopK, HandOrderedAndTies) {
  SimilarityMatrix m;
  m.values = {{1.0, 0.2, 0.7}, {0.2, 1.0, 0.5}, {0.7, 0.5, 1.0}};
  EXPECT_EQ(top_k_similar(m, 0, 2), (std::vector<std::size_t>{2, 1}));
  EXPECT_EQ(top_k_similar(m, 1, 1), (std::vector<std::size_t>{2}));
  SimilarityMatrix flat;
  flat.values.assign(5, std::vector<double>(5, 0.3));
  EXPECT_EQ(top_k_similar(flat, 2, 4), (std::vector<std::size_t>{0, 1, 3, 4}));
  EXPECT_THROW(top_k_similar(m, 0, 3), std::invalid_argument);
}

TEST(TopK, InvariantToConstantShift) {
  RngStream rng(2);
  SimilarityMatrix m;
  m.values.assign(6, std::vector<double>(6, 0.0));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = i; j < 6; ++j) m.values[i][j] = m.values[j][i] = i == j ? 1.0 : rng.uniform(-1, 1);
  auto shifted = m;
  for (auto& r : shifted.values)
    for (double& x : r) x += 3.25;
  for (std::size_t a = 0; a < 6; ++a) EXPECT_EQ(top_k_similar(m, a, 4), top_k_similar(shifted, a, 4));
}

TEST(Hierarchical, HandTracedFivePoints) {
  // d01 .1, d34 .2, then {0,1}+2 at (.5+.4)/2, then the two groups at the
  // mean of six cross distances.
  const std::vector<std::vector<double>> d{{0.0, 0.1, 0.5, 0.9, 0.8},
                                           {0.1, 0.0, 0.4, 0.85, 0.7},
                                           {0.5, 0.4, 0.0, 0.6, 0.65},
                                           {0.9, 0.85, 0.6, 0.0, 0.2},
                                           {0.8, 0.7, 0.65, 0.2, 0.0}};
  const auto r = hierarchical_cluster(from_distances(d), 2);
  const auto& ms = r.dendrogram.merges;
  ASSERT_EQ(ms.size(), 4u);
  EXPECT_EQ(ms[0].a, 0u);
  EXPECT_EQ(ms[0].b, 1u);
  EXPECT_NEAR(ms[0].height, 0.1, 1e-12);
  EXPECT_EQ(ms[1].a, 3u);
  EXPECT_EQ(ms[1].b, 4u);
  EXPECT_NEAR(ms[1].height, 0.2, 1e-12);
  EXPECT_EQ(ms[2].a, 2u);
  EXPECT_EQ(ms[2].b, 5u);
  EXPECT_NEAR(ms[2].height, 0.45, 1e-12);
  EXPECT_EQ(ms[3].a, 6u);
  EXPECT_EQ(ms[3].b, 7u);
  EXPECT_NEAR(ms[3].height, (0.9 + 0.8 + 0.85 + 0.7 + 0.6 + 0.65) / 6, 1e-12);
  EXPECT_EQ(ms[3].size, 5u);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 0, 1, 1}));
}

TEST(Hierarchical, OutlierMergesLast) {
  const std::vector<std::vector<double>> p{{0.0, 0.0}, {0.1, 0.0}, {50.0, 50.0}};
  const auto r = hierarchical_cluster(similarity(p, Metric::neg_euclidean, false), 2);
  EXPECT_EQ(r.dendrogram.merges.back().a, 2u);
  EXPECT_EQ(r.labels, (std::vector<int>{0, 0, 1}));
}

TEST(Hierarchical, SeparatedBlobsAndCuts) {
  RngStream rng(8);
  std::vector<std::vector<double>> p;
  for (int i = 0; i < 8; ++i) {
    const double c = i % 2 == 0 ? -10.0 : 10.0;
    p.push_back({c + rng.normal() * 0.1, c + rng.normal() * 0.1, rng.normal() * 0.1});
  }
  const auto s = similarity(p, Metric::neg_euclidean, false);
  const auto r = hierarchical_cluster(s, 2);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(r.labels[i], static_cast<int>(i % 2));
  // Monotone heights.
  for (std::size_t i = 1; i < r.dendrogram.merges.size(); ++i)
    EXPECT_GE(r.dendrogram.merges[i].height, r.dendrogram.merges[i - 1].height - 1e-12);
  EXPECT_EQ(cut_dendrogram(r.dendrogram, 1), std::vector<int>(8, 0));
  std::vector<int> singletons(8);
  std::iota(singletons.begin(), singletons.end(), 0);
  EXPECT_EQ(cut_dendrogram(r.dendrogram, 8), singletons);
  EXPECT_THROW(hierarchical_cluster(s, 9), std::invalid_argument);
  EXPECT_THROW(hierarchical_cluster(s, 0), std::invalid_argument);
}

TEST(Hierarchical, RandomMatricesMonotone) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    RngStream rng(seed);
    std::vector<std::vector<double>> p(9, std::vector<double>(5));
    for (auto& v : p)
      for (double& x : v) x = rng.normal();
    const auto r = hierarchical_cluster(similarity(p), 3);
    ASSERT_EQ(r.dendrogram.merges.size(), 8u);
    for (std::size_t i = 1; i < 8; ++i)
      EXPECT_GE(r.dendrogram.merges[i].height, r.dendrogram.merges[i - 1].height - 1e-12);
    int groups = 0;
    for (int l : r.labels) groups = std::max(groups, l + 1);
    EXPECT_EQ(groups, 3);
  }
}

TEST(Hierarchical, AsymmetricRejected) {
  SimilarityMatrix m;
  m.values = {{1.0, 0.2}, {0.3, 1.0}};
  EXPECT_THROW(hierarchical_cluster(m, 1), std::invalid_argument);
}

TEST(Importance, AffinityIsSymmetrized) {
  const std::vector<std::vector<double>> rho{{0.5, 0.5, 0.0}, {0.1, 0.9, 0.0}, {0.0, 0.0, 1.0}};
  const auto a = importance_affinity(rho);
  EXPECT_EQ(a(0, 1), 0.3);
  EXPECT_EQ(a(1, 0), 0.3);
  EXPECT_EQ(a(2, 2), 1.0);
  EXPECT_EQ(hierarchical_cluster(a, 2).labels, (std::vector<int>{0, 0, 1}));
}

TEST(Snapshots, LookupOrderAndErrors) {
  std::vector<nlohmann::json> log;
  for (int t = 1; t <= 100; ++t) {
    nlohmann::json j;
    j["round"] = t;
    j["method"] = "cluster";
    j["labels"] = std::vector<int>{t % 2, 1 - t % 2, 1 - t % 2};
    log.push_back(j);
  }
  const std::vector<std::uint64_t> one{1};
  const auto s1 = snapshot_series(log, one);
  ASSERT_EQ(s1.size(), 1u);
  EXPECT_EQ(s1[0].labels, (std::vector<int>{0, 1, 1}));  // canonicalized from (1,0,0)
  const std::vector<std::uint64_t> four{1, 25, 75, 100};
  const auto s4 = snapshot_series(log, four);
  ASSERT_EQ(s4.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(s4[i].round, four[i]);
  const std::vector<std::uint64_t> missing{101};
  try {
    snapshot_series(log, missing);
    FAIL() << "expected out_of_range";
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("available rounds: 1,2,3"), std::string::npos);
  }
}

TEST(Snapshots, ImportanceRowsPassThrough) {
  const auto path = (std::filesystem::temp_directory_path() / "hfrl_rounds_test.jsonl").string();
  {
    std::ofstream f(path);
    for (int seed = 1; seed <= 2; ++seed)
      for (int t = 1; t <= 3; ++t) {
        nlohmann::json j;
        j["round"] = t;
        j["seed"] = seed;
        j["method"] = "fomo";
        j["importance"] = std::vector<std::vector<double>>{{0.25, 0.75}, {1.0, 0.0}};
        f << j.dump() << "\n";
      }
  }
  const auto rounds = read_rounds(path, 2);
  EXPECT_EQ(rounds.size(), 3u);
  const std::vector<std::uint64_t> w{2};
  const auto snaps = snapshot_series(rounds, w);
  ASSERT_EQ(snaps[0].importance.size(), 2u);
  for (const auto& row : snaps[0].importance)
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-12);
  std::filesystem::remove(path);
}
