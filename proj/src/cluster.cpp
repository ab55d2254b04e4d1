#include "tkf/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "tkf/parallel.hpp"

namespace tkf {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Single-linkage merge row in scipy layout: children, height, merged size.
struct LinkageRow {
  int left = 0;
  int right = 0;
  double distance = 0.0;
  int size = 0;
};

struct CondensedRow {
  int parent = 0;
  int child = 0;
  double lambda = 0.0;
  int child_size = 0;
};

std::vector<LinkageRow> single_linkage(const std::vector<MstEdge>& mst, int n) {
  std::vector<int> parent(static_cast<std::size_t>(2 * n - 1));
  std::iota(parent.begin(), parent.end(), 0);
  std::vector<int> size(parent.size(), 1);
  auto find = [&](int x) {
    int root = x;
    while (parent[static_cast<std::size_t>(root)] != root) root = parent[static_cast<std::size_t>(root)];
    while (parent[static_cast<std::size_t>(x)] != root) {
      const int next = parent[static_cast<std::size_t>(x)];
      parent[static_cast<std::size_t>(x)] = root;
      x = next;
    }
    return root;
  };
  std::vector<LinkageRow> rows;
  rows.reserve(mst.size());
  int next_label = n;
  for (const auto& e : mst) {
    const int aa = find(e.a);
    const int bb = find(e.b);
    const int merged = size[static_cast<std::size_t>(aa)] + size[static_cast<std::size_t>(bb)];
    rows.push_back({aa, bb, e.weight, merged});
    parent[static_cast<std::size_t>(aa)] = next_label;
    parent[static_cast<std::size_t>(bb)] = next_label;
    size[static_cast<std::size_t>(next_label)] = merged;
    ++next_label;
  }
  return rows;
}

std::vector<int> bfs_hierarchy(const std::vector<LinkageRow>& h, int n, int start) {
  std::vector<int> out;
  std::vector<int> level{start};
  while (!level.empty()) {
    out.insert(out.end(), level.begin(), level.end());
    std::vector<int> next;
    for (int node : level) {
      if (node < n) continue;
      const auto& row = h[static_cast<std::size_t>(node - n)];
      next.push_back(row.left);
      next.push_back(row.right);
    }
    level = std::move(next);
  }
  return out;
}

std::vector<CondensedRow> condense(const std::vector<LinkageRow>& h, int n, int mcs) {
  const int root = 2 * (n - 1);
  std::vector<int> relabel(static_cast<std::size_t>(root + 1), 0);
  std::vector<char> ignore(static_cast<std::size_t>(root + 1), 0);
  relabel[static_cast<std::size_t>(root)] = n;
  int next_label = n + 1;
  std::vector<CondensedRow> out;

  auto node_size = [&](int node) { return node >= n ? h[static_cast<std::size_t>(node - n)].size : 1; };
  auto fall_out = [&](int parent_label, int subtree, double lambda) {
    for (int sub : bfs_hierarchy(h, n, subtree)) {
      if (sub < n) out.push_back({parent_label, sub, lambda, 1});
      ignore[static_cast<std::size_t>(sub)] = 1;
    }
  };

  for (int node : bfs_hierarchy(h, n, root)) {
    if (node < n || ignore[static_cast<std::size_t>(node)]) continue;
    const auto& row = h[static_cast<std::size_t>(node - n)];
    const double lambda = row.distance > 0.0 ? 1.0 / row.distance : kInf;
    const int left_count = node_size(row.left);
    const int right_count = node_size(row.right);
    const int label = relabel[static_cast<std::size_t>(node)];
    if (left_count >= mcs && right_count >= mcs) {
      relabel[static_cast<std::size_t>(row.left)] = next_label++;
      out.push_back({label, relabel[static_cast<std::size_t>(row.left)], lambda, left_count});
      relabel[static_cast<std::size_t>(row.right)] = next_label++;
      out.push_back({label, relabel[static_cast<std::size_t>(row.right)], lambda, right_count});
    } else if (left_count < mcs && right_count < mcs) {
      fall_out(label, row.left, lambda);
      fall_out(label, row.right, lambda);
    } else if (left_count < mcs) {
      relabel[static_cast<std::size_t>(row.right)] = label;
      fall_out(label, row.left, lambda);
    } else {
      relabel[static_cast<std::size_t>(row.left)] = label;
      fall_out(label, row.right, lambda);
    }
  }
  return out;
}

std::vector<int> extract_eom(const std::vector<CondensedRow>& tree, int n) {
  std::vector<int> labels(static_cast<std::size_t>(n), kNoise);
  if (tree.empty()) return labels;

  int max_parent = n;
  for (const auto& r : tree) max_parent = std::max(max_parent, r.parent);
  const std::size_t n_clusters = static_cast<std::size_t>(max_parent - n + 1);

  std::vector<double> birth(n_clusters, std::numeric_limits<double>::quiet_NaN());
  std::vector<int> cluster_parent(n_clusters, -1);
  std::vector<std::vector<int>> children(n_clusters);
  std::vector<int> point_parent(static_cast<std::size_t>(n), -1);
  for (const auto& r : tree) {
    if (r.child >= n) {
      birth[static_cast<std::size_t>(r.child - n)] = r.lambda;
      cluster_parent[static_cast<std::size_t>(r.child - n)] = r.parent;
      if (r.child_size > 1) children[static_cast<std::size_t>(r.parent - n)].push_back(r.child);
    } else {
      point_parent[static_cast<std::size_t>(r.child)] = r.parent;
    }
  }
  birth[0] = 0.0;

  std::vector<double> stability(n_clusters, 0.0);
  for (const auto& r : tree) {
    const std::size_t p = static_cast<std::size_t>(r.parent - n);
    stability[p] += (r.lambda - birth[p]) * static_cast<double>(r.child_size);
  }

  // Descending id order is a reverse topological order; the root is excluded.
  std::vector<char> selected(n_clusters, 0);
  for (std::size_t c = 1; c < n_clusters; ++c) selected[c] = 1;
  for (std::size_t c = n_clusters; c-- > 1;) {
    // Accumulated in single precision, as the reference implementation does.
    float subtree = 0.0f;
    for (int ch : children[c]) subtree = static_cast<float>(static_cast<double>(subtree) + stability[static_cast<std::size_t>(ch - n)]);
    if (static_cast<double>(subtree) > stability[c]) {
      selected[c] = 0;
      stability[c] = static_cast<double>(subtree);
    } else {
      std::deque<int> queue(children[c].begin(), children[c].end());
      while (!queue.empty()) {
        const int d = queue.front();
        queue.pop_front();
        selected[static_cast<std::size_t>(d - n)] = 0;
        for (int g : children[static_cast<std::size_t>(d - n)]) queue.push_back(g);
      }
    }
  }

  for (int p = 0; p < n; ++p) {
    int c = point_parent[static_cast<std::size_t>(p)];
    while (c > n && !selected[static_cast<std::size_t>(c - n)]) c = cluster_parent[static_cast<std::size_t>(c - n)];
    if (c > n) labels[static_cast<std::size_t>(p)] = c;
  }

  // Renumber by smallest member index.
  std::map<int, int> renumber;
  for (int& l : labels) {
    if (l == kNoise) continue;
    auto [it, inserted] = renumber.try_emplace(l, static_cast<int>(renumber.size()));
    l = it->second;
  }
  return labels;
}

bool numpy_isclose(double a, double b) {
  if (a == b) return true;
  if (!std::isfinite(a) || !std::isfinite(b)) return false;
  return std::abs(a - b) <= 1e-8 + 1e-5 * std::abs(b);
}

// All-points core distance of each member, evaluated in log space so large
// dimensions do not overflow.
std::vector<double> all_points_core(const Matrix& dist, double dim) {
  const Eigen::Index m = dist.rows();
  std::vector<double> core(static_cast<std::size_t>(m), 0.0);
  if (m < 2) return core;
  bool any_nonzero = false;
  std::vector<double> log_sum(static_cast<std::size_t>(m), -kInf);
  for (Eigen::Index i = 0; i < m; ++i) {
    double peak = -kInf;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = dist(i, j);
      if (d != 0.0) peak = std::max(peak, -dim * std::log(d));
    }
    if (peak == -kInf) continue;
    any_nonzero = true;
    double acc = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const double d = dist(i, j);
      if (d != 0.0) acc += std::exp(-dim * std::log(d) - peak);
    }
    log_sum[static_cast<std::size_t>(i)] = peak + std::log(acc) - std::log(static_cast<double>(m - 1));
  }
  if (!any_nonzero) return core;
  for (Eigen::Index i = 0; i < m; ++i) {
    const double ls = log_sum[static_cast<std::size_t>(i)];
    core[static_cast<std::size_t>(i)] = ls == -kInf ? kInf : std::exp(-ls / dim);
  }
  return core;
}

struct InternalTree {
  std::vector<int> internal_nodes;
  double sparseness = 0.0;
};

InternalTree internal_mst(const Matrix& mr) {
  const int m = static_cast<int>(mr.rows());
  InternalTree out;
  if (m < 2) {
    out.internal_nodes = {0};
    return out;
  }
  // Prim from vertex 0, then re-attach each vertex to the lowest-index tree
  // vertex whose reachability matches the edge weight.
  std::vector<char> in_tree(static_cast<std::size_t>(m), 0);
  std::vector<double> best(static_cast<std::size_t>(m), std::numeric_limits<double>::max());
  std::vector<int> order{0};
  std::vector<MstEdge> edges;
  int current = 0;
  for (int step = 1; step < m; ++step) {
    in_tree[static_cast<std::size_t>(current)] = 1;
    double new_d = std::numeric_limits<double>::max();
    int new_node = 0;
    for (int j = 0; j < m; ++j) {
      if (in_tree[static_cast<std::size_t>(j)]) continue;
      const double d = mr(current, j);
      if (d < best[static_cast<std::size_t>(j)]) best[static_cast<std::size_t>(j)] = d;
      if (best[static_cast<std::size_t>(j)] < new_d) {
        new_d = best[static_cast<std::size_t>(j)];
        new_node = j;
      }
    }
    int source = -1;
    std::vector<int> sorted_tree = order;
    std::sort(sorted_tree.begin(), sorted_tree.end());
    for (int v : sorted_tree) {
      if (v != new_node && numpy_isclose(mr(new_node, v), new_d)) {
        source = v;
        break;
      }
    }
    if (source < 0) source = current;
    edges.push_back({source, new_node, new_d});
    order.push_back(new_node);
    current = new_node;
  }

  std::vector<int> degree(static_cast<std::size_t>(m), 0);
  for (const auto& e : edges) {
    ++degree[static_cast<std::size_t>(e.a)];
    ++degree[static_cast<std::size_t>(e.b)];
  }
  std::vector<char> internal(static_cast<std::size_t>(m), 0);
  for (int v = 0; v < m; ++v)
    if (degree[static_cast<std::size_t>(v)] > 1) {
      out.internal_nodes.push_back(v);
      internal[static_cast<std::size_t>(v)] = 1;
    }
  if (out.internal_nodes.empty()) {
    out.internal_nodes = {0};
    internal[0] = 1;
  }
  double internal_max = -kInf;
  double all_max = -kInf;
  for (const auto& e : edges) {
    all_max = std::max(all_max, e.weight);
    if (internal[static_cast<std::size_t>(e.a)] && internal[static_cast<std::size_t>(e.b)])
      internal_max = std::max(internal_max, e.weight);
  }
  out.sparseness = internal_max > -kInf ? internal_max : all_max;
  return out;
}

double dbcv_from_distances(const Matrix& dist, const std::vector<int>& labels, double dim) {
  const Eigen::Index n = dist.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n) throw ClusterError("label count mismatch");
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < static_cast<int>(n); ++i)
    if (labels[static_cast<std::size_t>(i)] >= 0) members[labels[static_cast<std::size_t>(i)]].push_back(i);
  if (members.size() < 2) throw DbcvUndefined();
  if (!(dim > 0.0)) throw ClusterError("DBCV needs at least one dimension");

  struct Info {
    std::vector<int> rows;
    std::vector<double> core;
    InternalTree tree;
  };
  std::vector<Info> info;
  for (auto& [label, rows] : members) {
    const Eigen::Index m = static_cast<Eigen::Index>(rows.size());
    Matrix sub(m, m);
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b) sub(a, b) = dist(rows[static_cast<std::size_t>(a)], rows[static_cast<std::size_t>(b)]);
    Info ci;
    ci.rows = rows;
    ci.core = all_points_core(sub, dim);
    Matrix mr = sub;
    for (Eigen::Index a = 0; a < m; ++a)
      for (Eigen::Index b = 0; b < m; ++b)
        mr(a, b) = std::max({sub(a, b), ci.core[static_cast<std::size_t>(a)], ci.core[static_cast<std::size_t>(b)]});
    ci.tree = internal_mst(mr);
    info.push_back(std::move(ci));
  }

  const std::size_t k = info.size();
  std::vector<double> min_sep(k, kInf);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      double sep = kInf;
      for (int a : info[i].tree.internal_nodes)
        for (int b : info[j].tree.internal_nodes) {
          const double d = dist(info[i].rows[static_cast<std::size_t>(a)], info[j].rows[static_cast<std::size_t>(b)]);
          sep = std::min(sep, std::max({d, info[i].core[static_cast<std::size_t>(a)], info[j].core[static_cast<std::size_t>(b)]}));
        }
      min_sep[i] = std::min(min_sep[i], sep);
      min_sep[j] = std::min(min_sep[j], sep);
    }
  }

  double score = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double sparse = info[i].tree.sparseness;
    const double denom = std::max(min_sep[i], sparse);
    const double validity = denom > 0.0 ? (min_sep[i] - sparse) / denom : 0.0;
    score += static_cast<double>(info[i].rows.size()) / static_cast<double>(n) * validity;
  }
  return std::clamp(score, -1.0, 1.0);
}

std::map<int, std::int64_t> medoids_from_distances(const Matrix& dist, const std::vector<int>& labels) {
  std::map<int, std::vector<int>> members;
  for (int i = 0; i < static_cast<int>(labels.size()); ++i)
    if (labels[static_cast<std::size_t>(i)] >= 0) members[labels[static_cast<std::size_t>(i)]].push_back(i);
  std::map<int, std::int64_t> out;
  for (const auto& [label, rows] : members) {
    double best = kInf;
    int best_row = rows.front();
    for (int a : rows) {
      double sum = 0.0;
      for (int b : rows) sum += dist(a, b);
      if (sum < best) {
        best = sum;
        best_row = a;
      }
    }
    out[label] = best_row;
  }
  return out;
}

bool prefer(const ClusterParams& a, const ClusterParams& b) {
  if (a.min_cluster_size != b.min_cluster_size) return a.min_cluster_size > b.min_cluster_size;
  return a.min_samples < b.min_samples;
}

int count_clusters(const std::vector<int>& labels) {
  std::set<int> s;
  for (int l : labels)
    if (l >= 0) s.insert(l);
  return static_cast<int>(s.size());
}

int count_noise(const std::vector<int>& labels) {
  return static_cast<int>(std::count_if(labels.begin(), labels.end(), [](int l) { return l < 0; }));
}

}  // namespace

Matrix pairwise_distances(const Matrix& x) {
  const Eigen::Index n = x.rows();
  Matrix d = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = (x.row(i) - x.row(j)).norm();
      d(i, j) = v;
      d(j, i) = v;
    }
  return d;
}

std::vector<double> core_distances_from(const Matrix& distances, int min_samples) {
  const Eigen::Index n = distances.rows();
  if (min_samples < 1) throw ClusterError("min_samples must be >= 1");
  if (n <= min_samples)
    throw ClusterError("need more than min_samples points (n=" + std::to_string(n) +
                       ", min_samples=" + std::to_string(min_samples) + ")");
  std::vector<double> core(static_cast<std::size_t>(n));
  std::vector<double> row(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] = distances(i, j);
    row[static_cast<std::size_t>(i)] = -1.0;  // self sorts first
    std::nth_element(row.begin(), row.begin() + min_samples, row.end());
    core[static_cast<std::size_t>(i)] = row[static_cast<std::size_t>(min_samples)];
  }
  return core;
}

std::vector<double> core_distances(const Matrix& x, int min_samples) {
  return core_distances_from(pairwise_distances(x), min_samples);
}

MutualReachabilityGraph mutual_reachability_from(const Matrix& distances,
                                                 const std::vector<double>& core) {
  const Eigen::Index n = distances.rows();
  if (distances.cols() != n || static_cast<Eigen::Index>(core.size()) != n)
    throw ClusterError("core distance count does not match point count");
  MutualReachabilityGraph g;
  g.core_distances = core;
  g.weights = Matrix::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j)
        g.weights(i, j) = std::max({core[static_cast<std::size_t>(i)], core[static_cast<std::size_t>(j)], distances(i, j)});
  return g;
}

MutualReachabilityGraph mutual_reachability(const Matrix& x, const std::vector<double>& core) {
  return mutual_reachability_from(pairwise_distances(x), core);
}

std::vector<MstEdge> build_mst(const MutualReachabilityGraph& graph) {
  const int n = static_cast<int>(graph.size());
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<char> in_tree(static_cast<std::size_t>(n), 0);
  std::vector<double> best(static_cast<std::size_t>(n), kInf);
  std::vector<int> source(static_cast<std::size_t>(n), 0);
  int current = 0;
  for (int step = 1; step < n; ++step) {
    in_tree[static_cast<std::size_t>(current)] = 1;
    int next = -1;
    for (int j = 0; j < n; ++j) {
      if (in_tree[static_cast<std::size_t>(j)]) continue;
      const double d = graph.weights(current, j);
      auto& bj = best[static_cast<std::size_t>(j)];
      auto& sj = source[static_cast<std::size_t>(j)];
      if (d < bj || (d == bj && current < sj)) {
        bj = d;
        sj = current;
      }
      if (next == -1 || bj < best[static_cast<std::size_t>(next)]) next = j;
    }
    edges.push_back({std::min(source[static_cast<std::size_t>(next)], next),
                     std::max(source[static_cast<std::size_t>(next)], next),
                     best[static_cast<std::size_t>(next)]});
    current = next;
  }
  std::stable_sort(edges.begin(), edges.end(), [](const MstEdge& a, const MstEdge& b) {
    if (a.weight != b.weight) return a.weight < b.weight;
    if (a.a != b.a) return a.a < b.a;
    return a.b < b.b;
  });
  return edges;
}

std::vector<int> condense_and_extract(const std::vector<MstEdge>& mst, int n_points,
                                      int min_cluster_size) {
  if (min_cluster_size < 2) throw ClusterError("min_cluster_size must be >= 2");
  if (n_points <= 1 || n_points < min_cluster_size)
    return std::vector<int>(static_cast<std::size_t>(std::max(n_points, 0)), kNoise);
  if (static_cast<int>(mst.size()) != n_points - 1) throw ClusterError("MST must have n-1 edges");
  const auto hierarchy = single_linkage(mst, n_points);
  return extract_eom(condense(hierarchy, n_points, min_cluster_size), n_points);
}

std::vector<int> hdbscan_from_distances(const Matrix& distances, const ClusterParams& params) {
  if (params.min_cluster_size < 2) throw ClusterError("min_cluster_size must be >= 2");
  if (params.min_samples < 1) throw ClusterError("min_samples must be >= 1");
  if (params.min_samples > params.min_cluster_size)
    throw ClusterError("min_samples must not exceed min_cluster_size");
  const int n = static_cast<int>(distances.rows());
  if (n < params.min_cluster_size) return std::vector<int>(static_cast<std::size_t>(n), kNoise);
  const auto core = core_distances_from(distances, params.min_samples);
  const auto graph = mutual_reachability_from(distances, core);
  return condense_and_extract(build_mst(graph), n, params.min_cluster_size);
}

std::vector<int> hdbscan(const Matrix& x, const ClusterParams& params) {
  return hdbscan_from_distances(pairwise_distances(x), params);
}

double dbcv(const Matrix& x, const std::vector<int>& labels) {
  return dbcv_from_distances(pairwise_distances(x), labels, static_cast<double>(x.cols()));
}

std::vector<ClusterParams> default_grid(Eigen::Index n) {
  std::vector<ClusterParams> grid;
  for (int mcs : {2, 3, 5, 8, 12, 20}) {
    if (mcs > n / 2) continue;
    for (int ms : {1, 2, 5, 10})
      if (ms <= mcs) grid.push_back({mcs, ms});
  }
  return grid;
}

int ClusterSolution::n_clusters() const { return count_clusters(labels); }
int ClusterSolution::n_noise() const { return count_noise(labels); }

ClusterSolution grid_search(const Matrix& x, const std::vector<ClusterParams>& grid, int workers) {
  const Eigen::Index n = x.rows();
  if (n == 0) throw ClusterError("empty input");
  const Matrix dist = pairwise_distances(x);
  const double dim = static_cast<double>(x.cols());

  std::vector<GridPointReport> reports(grid.size());
  std::vector<std::vector<int>> runs(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    auto& rep = reports[i];
    rep.params = grid[i];
    const auto& p = grid[i];
    if (p.min_cluster_size < 2 || p.min_samples < 1 || p.min_samples > p.min_cluster_size ||
        p.min_samples >= n) {
      rep.skip_reason = "invalid params";
      rep.n_noise = static_cast<int>(n);
      return;
    }
    runs[i] = hdbscan_from_distances(dist, p);
    rep.n_clusters = count_clusters(runs[i]);
    rep.n_noise = count_noise(runs[i]);
    if (2 * rep.n_noise > n) {
      rep.skip_reason = "noise > 50%";
      return;
    }
    try {
      rep.dbcv = dbcv_from_distances(dist, runs[i], dim);
    } catch (const DbcvUndefined&) {
      rep.skip_reason = "undefined DBCV";
    }
  });

  ClusterSolution sol;
  sol.grid = reports;
  std::optional<std::size_t> winner;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    if (!reports[i].dbcv) continue;
    if (!winner) {
      winner = i;
      continue;
    }
    const double a = *reports[i].dbcv;
    const double b = *reports[*winner].dbcv;
    if (a > b + 1e-9 || (std::abs(a - b) <= 1e-9 && prefer(reports[i].params, reports[*winner].params)))
      winner = i;
  }
  if (winner) {
    sol.selection = kSelectionDbcv;
    sol.dbcv = reports[*winner].dbcv;
  } else {
    for (std::size_t i = 0; i < reports.size(); ++i) {
      if (reports[i].skip_reason == "invalid params" || reports[i].n_clusters < 1) continue;
      if (!winner || reports[i].n_noise < reports[*winner].n_noise ||
          (reports[i].n_noise == reports[*winner].n_noise && prefer(reports[i].params, reports[*winner].params)))
        winner = i;
    }
    if (winner) sol.selection = kSelectionFewestNoise;
  }

  if (winner) {
    sol.labels = runs[*winner];
    sol.params = reports[*winner].params;
  } else {
    sol.selection = kSelectionSingleCluster;
    sol.labels.assign(static_cast<std::size_t>(n), 0);
  }
  sol.medoid_indices = medoids_from_distances(dist, sol.labels);
  return sol;
}

std::map<int, std::int64_t> medoids(const Matrix& x, const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != x.rows()) throw ClusterError("label count mismatch");
  return medoids_from_distances(pairwise_distances(x), labels);
}

}  // namespace tkf
