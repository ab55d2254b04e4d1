#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "tkf/cluster.hpp"

namespace tkf {
namespace {

using testing::label_agreement;
using testing::load_fixture;
using testing::points_matrix;

Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

TEST(CoreDistance, KthNeighborExcludingSelf) {
  const Matrix x = column({0, 1, 3, 7});
  EXPECT_EQ(core_distances(x, 1), (std::vector<double>{1, 1, 2, 4}));
  EXPECT_EQ(core_distances(x, 2), (std::vector<double>{3, 2, 3, 6}));
  EXPECT_THROW(core_distances(x, 4), ClusterError);
}

TEST(MutualReachability, MaxOfCoresAndDistance) {
  const Matrix x = column({0, 1, 3, 7});
  const auto g = mutual_reachability(x, core_distances(x, 2));
  EXPECT_EQ(g.weights(0, 1), 3.0);
  EXPECT_EQ(g.weights(2, 3), 6.0);
  EXPECT_EQ(g.weights(0, 3), 7.0);
  EXPECT_EQ(g.weights(1, 1), 0.0);
}

TEST(Mst, SpanningAndSorted) {
  std::mt19937 rng(11);
  std::normal_distribution<double> d;
  Matrix x(30, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = d(rng);
  const auto g = mutual_reachability(x, core_distances(x, 3));
  const auto mst = build_mst(g);
  ASSERT_EQ(mst.size(), 29u);
  std::vector<int> parent(30);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  for (std::size_t i = 0; i < mst.size(); ++i) {
    if (i) {
      EXPECT_LE(mst[i - 1].weight, mst[i].weight);
    }
    EXPECT_EQ(mst[i].weight, g.weights(mst[i].a, mst[i].b));
    const int ra = find(mst[i].a), rb = find(mst[i].b);
    ASSERT_NE(ra, rb) << "cycle";
    parent[ra] = rb;
  }
}

TEST(Hdbscan, HandDerivableTwoGroups) {
  const Matrix x = column({0, 1, 2, 10, 11, 12});
  const auto labels = hdbscan(x, {3, 2});
  EXPECT_EQ(labels, (std::vector<int>{0, 0, 0, 1, 1, 1}));
}

TEST(Hdbscan, MatchesFrozenReference) {
  const auto fixture = load_fixture("hdbscan_reference.json");
  int checked = 0;
  for (const auto& c : fixture.at("cases")) {
    SCOPED_TRACE(c.at("name").get<std::string>());
    const Matrix x = points_matrix(c.at("points"));
    const ClusterParams p{c.at("min_cluster_size").get<int>(), c.at("min_samples").get<int>()};
    const auto ours = hdbscan(x, p);
    const auto ref = c.at("labels").get<std::vector<int>>();
    EXPECT_GE(label_agreement(ours, ref), 0.95);
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(Hdbscan, SmallInputsAreNoise) {
  EXPECT_EQ(hdbscan(column({0, 1}), {5, 1}), (std::vector<int>{kNoise, kNoise}));
  EXPECT_THROW(hdbscan(column({0, 1, 2}), {1, 1}), ClusterError);
}

TEST(Dbcv, MatchesFrozenReference) {
  const auto fixture = load_fixture("dbcv_reference.json");
  int checked = 0;
  for (const auto& c : fixture.at("cases")) {
    SCOPED_TRACE(c.at("name").get<std::string>());
    const double ours = dbcv(points_matrix(c.at("points")), c.at("labels").get<std::vector<int>>());
    EXPECT_NEAR(ours, c.at("dbcv").get<double>(), 1e-6);
    ++checked;
  }
  EXPECT_GE(checked, 20);
}

TEST(Dbcv, SeparatedPairScoresHigh) {
  const auto fixture = load_fixture("dbcv_reference.json");
  for (const auto& c : fixture.at("cases"))
    if (c.at("name") == "separated_pair") {
      EXPECT_GT(dbcv(points_matrix(c.at("points")), c.at("labels").get<std::vector<int>>()), 0.9);
    }
}

TEST(Dbcv, MixedLabelingsScoreNegative) {
  const auto fixture = load_fixture("dbcv_reference.json");
  int checked = 0;
  for (const auto& c : fixture.at("cases")) {
    const std::string name = c.at("name");
    if (name != "alternating_pair" && name != "permuted_blobs") continue;
    SCOPED_TRACE(name);
    EXPECT_LT(dbcv(points_matrix(c.at("points")), c.at("labels").get<std::vector<int>>()), 0.0);
    ++checked;
  }
  EXPECT_EQ(checked, 2);
}

TEST(Dbcv, UndefinedCases) {
  const Matrix x = column({0, 1, 2, 10, 11, 12});
  EXPECT_THROW(dbcv(x, {0, 0, 0, 0, 0, 0}), DbcvUndefined);
  EXPECT_THROW(dbcv(x, {-1, -1, -1, -1, -1, -1}), DbcvUndefined);
  EXPECT_THROW(dbcv(x, {0, 0, 0}), ClusterError);
  const double v = dbcv(x, {0, 0, 0, 1, 1, 1});
  EXPECT_GE(v, -1.0);
  EXPECT_LE(v, 1.0);
}

Matrix brute_medoid_check(const Matrix& x, const std::vector<int>& labels, const std::map<int, std::int64_t>& got) {
  std::map<int, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] != kNoise) members[labels[i]].push_back(static_cast<Eigen::Index>(i));
  EXPECT_EQ(got.size(), members.size());
  for (const auto& [label, rows] : members) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index arg = -1;
    for (Eigen::Index r : rows) {
      double s = 0.0;
      for (Eigen::Index q : rows) s += (x.row(r) - x.row(q)).norm();
      if (s < best - 1e-12) best = s, arg = r;
    }
    EXPECT_EQ(got.at(label), arg) << "cluster " << label;
  }
  return x;
}

TEST(Medoids, BruteForceArgmin) {
  const auto fixture = load_fixture("hdbscan_reference.json");
  for (const auto& c : fixture.at("cases")) {
    const Matrix x = points_matrix(c.at("points"));
    const auto labels = c.at("labels").get<std::vector<int>>();
    brute_medoid_check(x, labels, medoids(x, labels));
  }
}

TEST(Medoids, TiesGoToSmallestRow) {
  const Matrix x = column({5, 5, 5, 9});
  const auto m = medoids(x, {0, 0, 0, 1});
  EXPECT_EQ(m.at(0), 0);
  EXPECT_EQ(m.at(1), 3);
}

TEST(DefaultGrid, Bounds) {
  EXPECT_TRUE(default_grid(3).empty());
  const auto g = default_grid(20);
  for (const auto& p : g) {
    EXPECT_LE(p.min_cluster_size, 10);
    EXPECT_GE(p.min_cluster_size, 2);
    EXPECT_LE(p.min_samples, p.min_cluster_size);
  }
  EXPECT_EQ(std::set<int>({2, 3, 5, 8}), [&] {
    std::set<int> s;
    for (const auto& p : g) s.insert(p.min_cluster_size);
    return s;
  }());
}

TEST(GridSearch, PicksBestDbcvAndReportsEveryPoint) {
  std::mt19937 rng(21);
  std::normal_distribution<double> d(0.0, 0.3);
  Matrix x(45, 2);
  for (int i = 0; i < 45; ++i) {
    x(i, 0) = (i / 15) * 10.0 + d(rng);
    x(i, 1) = d(rng);
  }
  const auto grid = default_grid(45);
  const ClusterSolution s = grid_search(x, grid);
  EXPECT_EQ(s.selection, kSelectionDbcv);
  ASSERT_TRUE(s.params && s.dbcv);
  EXPECT_EQ(s.n_clusters(), 3);
  EXPECT_EQ(s.grid.size(), grid.size());
  for (const auto& g : s.grid)
    if (g.dbcv) {
      EXPECT_LE(*g.dbcv, *s.dbcv + 1e-12);
    }
  brute_medoid_check(x, s.labels, s.medoid_indices);
  // Threaded evaluation is identical.
  const ClusterSolution t = grid_search(x, grid, 3);
  EXPECT_EQ(t.labels, s.labels);
  EXPECT_EQ(t.params, s.params);
}

TEST(GridSearch, SingleClusterFallback) {
  const ClusterSolution s = grid_search(column({4.0}), default_grid(1));
  EXPECT_EQ(s.selection, kSelectionSingleCluster);
  EXPECT_FALSE(s.params);
  EXPECT_EQ(s.labels, (std::vector<int>{0}));
  EXPECT_EQ(s.medoid_indices.at(0), 0);

  // Identical points never split into two clusters, so DBCV stays undefined.
  const ClusterSolution flat = grid_search(Matrix::Zero(10, 2), default_grid(10));
  EXPECT_NE(flat.selection, kSelectionDbcv);
  EXPECT_GE(flat.n_clusters(), 1);
  for (const auto& g : flat.grid) EXPECT_FALSE(g.skip_reason.empty());
}

}  // namespace
}  // namespace tkf
