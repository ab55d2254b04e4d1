#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tkf/fusion.hpp"

namespace tkf {

inline constexpr int kNoise = -1;

class ClusterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Thrown when DBCV has no meaning for a labeling (all noise, or fewer than
/// two clusters so separation does not exist).
class DbcvUndefined : public std::runtime_error {
 public:
  DbcvUndefined() : std::runtime_error("undefined DBCV") {}
};

struct ClusterParams {
  int min_cluster_size = 5;
  int min_samples = 5;
  bool operator==(const ClusterParams&) const = default;
};

/// Dense symmetric Euclidean distance matrix.
Matrix pairwise_distances(const Matrix& x);

/// Distance to the min_samples-th nearest neighbor, self excluded.
std::vector<double> core_distances(const Matrix& x, int min_samples);
std::vector<double> core_distances_from(const Matrix& distances, int min_samples);

struct MutualReachabilityGraph {
  std::vector<double> core_distances;
  /// n x n, max(core(a), core(b), d(a, b)); the diagonal is zero.
  Matrix weights;
  Eigen::Index size() const noexcept { return weights.rows(); }
};

MutualReachabilityGraph mutual_reachability(const Matrix& x, const std::vector<double>& core);
MutualReachabilityGraph mutual_reachability_from(const Matrix& distances,
                                                 const std::vector<double>& core);

struct MstEdge {
  int a = 0;
  int b = 0;
  double weight = 0.0;
};

/// Prim over the dense graph starting at vertex 0. The next vertex is the
/// lowest-index one at minimum distance; a vertex's parent is the
/// lowest-index tree vertex reaching it at that distance. Edges come back
/// sorted by (weight, min endpoint, max endpoint).
std::vector<MstEdge> build_mst(const MutualReachabilityGraph& graph);

/// Single-linkage hierarchy from the MST, condensed at min_cluster_size,
/// stability-scored with lambda = 1/d and selected by excess of mass. The
/// root is never selected. Clusters are numbered 0..C-1 by their smallest
/// member index; unselected points get kNoise.
std::vector<int> condense_and_extract(const std::vector<MstEdge>& mst, int n_points,
                                      int min_cluster_size);

std::vector<int> hdbscan(const Matrix& x, const ClusterParams& params);
std::vector<int> hdbscan_from_distances(const Matrix& distances, const ClusterParams& params);

/// Density-based cluster validity in [-1, 1]. Noise points count in the
/// normalizing size but contribute no term. Throws DbcvUndefined.
double dbcv(const Matrix& x, const std::vector<int>& labels);

/// mcs in {2,3,5,8,12,20} with 2 <= mcs <= n/2, ms in {1,2,5,10} with ms <= mcs.
std::vector<ClusterParams> default_grid(Eigen::Index n);

struct GridPointReport {
  ClusterParams params;
  std::optional<double> dbcv;
  /// Empty when scored; otherwise "undefined DBCV", "noise > 50%" or "invalid params".
  std::string skip_reason;
  int n_clusters = 0;
  int n_noise = 0;
};

inline constexpr const char* kSelectionDbcv = "dbcv";
inline constexpr const char* kSelectionFewestNoise = "fallback: fewest noise";
inline constexpr const char* kSelectionSingleCluster = "grid exhausted → single cluster";

struct ClusterSolution {
  std::vector<int> labels;
  /// Absent when every frame was put in one cluster by the final fallback.
  std::optional<ClusterParams> params;
  std::optional<double> dbcv;
  /// Cluster label to row index of its medoid.
  std::map<int, std::int64_t> medoid_indices;
  std::string selection;
  std::vector<GridPointReport> grid;

  int n_clusters() const;
  int n_noise() const;
};

/// Scores every grid point and keeps the best DBCV; ties within 1e-9 go to
/// larger min_cluster_size, then smaller min_samples. Points with undefined
/// DBCV or more than half noise are skipped. With nothing scored, the
/// configuration with fewest noise and at least one cluster wins; failing
/// that, all rows form a single cluster. An empty grid takes the last path.
ClusterSolution grid_search(const Matrix& x, const std::vector<ClusterParams>& grid,
                            int workers = 1);

/// Per cluster, the member minimizing summed distance to the other members;
/// ties go to the smaller row index.
std::map<int, std::int64_t> medoids(const Matrix& x, const std::vector<int>& labels);

}  // namespace tkf
