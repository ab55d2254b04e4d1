#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "tkf/fusion.hpp"

namespace tkf::testing {

inline nlohmann::json load_fixture(const std::string& name) {
  std::ifstream in(std::string(TKF_TEST_DATA_DIR) + "/" + name);
  if (!in) throw std::runtime_error("missing fixture " + name);
  return nlohmann::json::parse(in);
}

inline Matrix points_matrix(const nlohmann::json& points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  const auto d = n ? static_cast<Eigen::Index>(points[0].size()) : 0;
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = points[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  return m;
}

/// Fraction of points whose labels agree after the best one-to-one relabeling
/// of clusters (greedy by overlap). Noise only matches noise.
inline double label_agreement(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size() || a.empty()) return 0.0;
  std::map<std::pair<int, int>, int> overlap;
  int agree = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || b[i] < 0) {
      agree += (a[i] < 0 && b[i] < 0);
      continue;
    }
    ++overlap[{a[i], b[i]}];
  }
  std::vector<std::tuple<int, int, int>> pairs;
  for (const auto& [k, c] : overlap) pairs.emplace_back(-c, k.first, k.second);
  std::sort(pairs.begin(), pairs.end());
  std::map<int, int> used_a, used_b;
  for (const auto& [neg, x, y] : pairs) {
    if (used_a.count(x) || used_b.count(y)) continue;
    used_a[x] = y;
    used_b[y] = x;
    agree += -neg;
  }
  return static_cast<double>(agree) / static_cast<double>(a.size());
}

}  // namespace tkf::testing
