#include "tkf/refine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <numeric>
#include <set>
#include <tuple>

namespace tkf {
namespace {

void require_size(const GrayImage& g, int min_side, const char* what) {
  if (g.width() < min_side || g.height() < min_side)
    throw RefineError(std::string(what) + " needs at least " + std::to_string(min_side) + "x" +
                      std::to_string(min_side) + " pixels, got " + std::to_string(g.width()) + "x" +
                      std::to_string(g.height()));
}

std::vector<double> gaussian_kernel(int size, double sigma) {
  std::vector<double> k(static_cast<std::size_t>(size));
  const int r = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double x = i - r;
    k[static_cast<std::size_t>(i)] = std::exp(-x * x / (2.0 * sigma * sigma));
    sum += k[static_cast<std::size_t>(i)];
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable convolution with replicated borders.
GrayImage blur_same(const GrayImage& src, const std::vector<double>& k) {
  const int r = static_cast<int>(k.size()) / 2;
  GrayImage tmp(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * src.at_clamped(x + i, y);
      tmp(x, y) = acc;
    }
  GrayImage out(src.width(), src.height());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < src.width(); ++x) {
      double acc = 0.0;
      for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * tmp.at_clamped(x, y + i);
      out(x, y) = acc;
    }
  return out;
}

// Separable convolution over fully covered windows only.
GrayImage blur_valid(const GrayImage& src, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int w = src.width() - n + 1;
  const int h = src.height() - n + 1;
  GrayImage tmp(w, src.height());
  for (int y = 0; y < src.height(); ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * src(x + i, y);
      tmp(x, y) = acc;
    }
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[static_cast<std::size_t>(i)] * tmp(x, y + i);
      out(x, y) = acc;
    }
  return out;
}

constexpr std::array<std::array<int, 2>, 16> kCircle{{{0, 3}, {1, 3}, {2, 2}, {3, 1},
                                                     {3, 0}, {3, -1}, {2, -2}, {1, -3},
                                                     {0, -3}, {-1, -3}, {-2, -2}, {-3, -1},
                                                     {-3, 0}, {-3, 1}, {-2, 2}, {-1, 3}}};

// Largest t for which some 9-arc is entirely beyond +t or -t; 0 if not a corner.
int fast_score(const ByteImage& img, int x, int y, int threshold) {
  const int c = img(x, y);
  std::array<int, 16> d{};
  for (int k = 0; k < 16; ++k) d[static_cast<std::size_t>(k)] = img(x + kCircle[static_cast<std::size_t>(k)][0], y + kCircle[static_cast<std::size_t>(k)][1]) - c;
  int best = 0;
  for (int k = 0; k < 16; ++k) {
    int lo_bright = std::numeric_limits<int>::max();
    int lo_dark = std::numeric_limits<int>::max();
    for (int j = 0; j < 9; ++j) {
      const int v = d[static_cast<std::size_t>((k + j) % 16)];
      lo_bright = std::min(lo_bright, v);
      lo_dark = std::min(lo_dark, -v);
    }
    best = std::max({best, lo_bright, lo_dark});
  }
  return best > threshold ? best : 0;
}

struct MserNode {
  int level = 0;
  int area = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  int seed = 0;
  int parent = -1;
  double variation = 0.0;
};

void mser_pass(const ByteImage& img, bool bright, const MserParams& params,
               std::vector<MserRegion>& out) {
  const int w = img.width();
  const int h = img.height();
  const int n = w * h;
  auto value = [&](int p) {
    const int v = img.data()[static_cast<std::size_t>(p)];
    return bright ? 255 - v : v;
  };

  std::array<std::vector<int>, 256> by_level;
  for (int p = 0; p < n; ++p) by_level[static_cast<std::size_t>(value(p))].push_back(p);

  std::vector<int> parent(static_cast<std::size_t>(n), -1);  // -1 = inactive
  std::vector<int> area(static_cast<std::size_t>(n), 0);
  std::vector<int> bx0(static_cast<std::size_t>(n)), by0(static_cast<std::size_t>(n)),
      bx1(static_cast<std::size_t>(n)), by1(static_cast<std::size_t>(n));
  std::vector<int> cur_node(static_cast<std::size_t>(n), -1);
  std::vector<char> dirty(static_cast<std::size_t>(n), 0);
  std::vector<MserNode> nodes;

  auto find = [&](int x) {
    int r = x;
    while (parent[static_cast<std::size_t>(r)] != r) r = parent[static_cast<std::size_t>(r)];
    while (parent[static_cast<std::size_t>(x)] != r) {
      const int nx = parent[static_cast<std::size_t>(x)];
      parent[static_cast<std::size_t>(x)] = r;
      x = nx;
    }
    return r;
  };

  for (int level = 0; level < 256; ++level) {
    const auto& pixels = by_level[static_cast<std::size_t>(level)];
    if (pixels.empty()) continue;
    std::vector<int> touched;
    std::vector<std::pair<int, int>> orphans;  // (node, root pixel at the time)
    auto mark = [&](int r) {
      if (dirty[static_cast<std::size_t>(r)]) return;
      dirty[static_cast<std::size_t>(r)] = 1;
      touched.push_back(r);
      if (cur_node[static_cast<std::size_t>(r)] >= 0) orphans.emplace_back(cur_node[static_cast<std::size_t>(r)], r);
    };
    for (int p : pixels) {
      const std::size_t sp = static_cast<std::size_t>(p);
      parent[sp] = p;
      area[sp] = 1;
      bx0[sp] = bx1[sp] = p % w;
      by0[sp] = by1[sp] = p / w;
      mark(p);
      const int px = p % w;
      const int py = p / w;
      const std::array<std::pair<int, int>, 4> nb{{{px - 1, py}, {px + 1, py}, {px, py - 1}, {px, py + 1}}};
      for (auto [qx, qy] : nb) {
        if (qx < 0 || qy < 0 || qx >= w || qy >= h) continue;
        const int q = qy * w + qx;
        if (parent[static_cast<std::size_t>(q)] < 0) continue;
        int rp = find(p);
        int rq = find(q);
        if (rp == rq) continue;
        mark(rq);
        mark(rp);
        if (area[static_cast<std::size_t>(rq)] > area[static_cast<std::size_t>(rp)] ||
            (area[static_cast<std::size_t>(rq)] == area[static_cast<std::size_t>(rp)] && rq < rp))
          std::swap(rp, rq);
        const std::size_t r = static_cast<std::size_t>(rp), o = static_cast<std::size_t>(rq);
        parent[o] = rp;
        area[r] += area[o];
        bx0[r] = std::min(bx0[r], bx0[o]);
        by0[r] = std::min(by0[r], by0[o]);
        bx1[r] = std::max(bx1[r], bx1[o]);
        by1[r] = std::max(by1[r], by1[o]);
      }
    }
    for (int r : touched) {
      const std::size_t sr = static_cast<std::size_t>(r);
      dirty[sr] = 0;
      if (parent[sr] != r) continue;
      MserNode node;
      node.level = level;
      node.area = area[sr];
      node.x0 = bx0[sr];
      node.y0 = by0[sr];
      node.x1 = bx1[sr];
      node.y1 = by1[sr];
      node.seed = r;
      cur_node[sr] = static_cast<int>(nodes.size());
      nodes.push_back(node);
    }
    for (auto [child, root] : orphans) nodes[static_cast<std::size_t>(child)].parent = cur_node[static_cast<std::size_t>(find(root))];
  }

  for (auto& node : nodes) {
    const int target = node.level + params.delta;
    const MserNode* a = &node;
    while (a->parent >= 0 && nodes[static_cast<std::size_t>(a->parent)].level <= target) a = &nodes[static_cast<std::size_t>(a->parent)];
    node.variation = static_cast<double>(a->area - node.area) / static_cast<double>(node.area);
  }
  std::vector<double> min_child(nodes.size(), std::numeric_limits<double>::infinity());
  for (const auto& node : nodes)
    if (node.parent >= 0) {
      auto& m = min_child[static_cast<std::size_t>(node.parent)];
      m = std::min(m, node.variation);
    }

  const double lo = params.min_area * n;
  const double hi = params.max_area * n;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const auto& node = nodes[i];
    if (node.area < lo || node.area > hi || node.variation > params.max_variation) continue;
    if (node.parent >= 0 && node.variation > nodes[static_cast<std::size_t>(node.parent)].variation) continue;
    if (!(node.variation < min_child[i])) continue;
    MserRegion region;
    region.level = bright ? 255 - node.level : node.level;
    region.bright = bright;
    region.area = node.area;
    region.x0 = node.x0;
    region.y0 = node.y0;
    region.x1 = node.x1;
    region.y1 = node.y1;
    region.variation = node.variation;
    region.seed_x = node.seed % w;
    region.seed_y = node.seed / w;
    out.push_back(region);
  }
}

double cross(const std::pair<long, long>& o, const std::pair<long, long>& a, const std::pair<long, long>& b) {
  return static_cast<double>(a.first - o.first) * static_cast<double>(b.second - o.second) -
         static_cast<double>(a.second - o.second) * static_cast<double>(b.first - o.first);
}

double hull_area(std::vector<std::pair<long, long>> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return 0.0;
  std::vector<std::pair<long, long>> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  double a = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& p = hull[i];
    const auto& q = hull[(i + 1) % hull.size()];
    a += static_cast<double>(p.first) * static_cast<double>(q.second) -
         static_cast<double>(q.first) * static_cast<double>(p.second);
  }
  return std::abs(a) / 2.0;
}

}  // namespace

double laplacian_variance(const GrayImage& gray) {
  require_size(gray, 3, "laplacian_variance");
  const int w = gray.width();
  const int h = gray.height();
  const double count = static_cast<double>(w - 2) * static_cast<double>(h - 2);
  double sum = 0.0;
  double sum_sq = 0.0;
  std::vector<double> r;
  r.reserve(static_cast<std::size_t>(count));
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const double v = gray(x - 1, y) + gray(x + 1, y) + gray(x, y - 1) + gray(x, y + 1) - 4.0 * gray(x, y);
      r.push_back(v);
      sum += v;
    }
  const double mean = sum / count;
  for (double v : r) sum_sq += (v - mean) * (v - mean);
  return sum_sq / count;
}

ByteImage canny_edges(const GrayImage& gray, double low_ratio, double high_ratio) {
  require_size(gray, 5, "canny_edge_density");
  const int w = gray.width();
  const int h = gray.height();
  const GrayImage smooth = blur_same(gray, gaussian_kernel(5, 1.4));
  GrayImage gx(w, h), gy(w, h), mag(w, h);
  double peak = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      auto s = [&](int dx, int dy) { return smooth.at_clamped(x + dx, y + dy); };
      const double vx = (s(1, -1) + 2.0 * s(1, 0) + s(1, 1)) - (s(-1, -1) + 2.0 * s(-1, 0) + s(-1, 1));
      const double vy = (s(-1, 1) + 2.0 * s(0, 1) + s(1, 1)) - (s(-1, -1) + 2.0 * s(0, -1) + s(1, -1));
      gx(x, y) = vx;
      gy(x, y) = vy;
      mag(x, y) = std::hypot(vx, vy);
      if (x > 0 && y > 0 && x < w - 1 && y < h - 1) peak = std::max(peak, mag(x, y));
    }
  ByteImage edges(w, h, 0);
  if (!(peak > 0.0)) return edges;
  const double low = low_ratio * peak;
  const double high = high_ratio * peak;
  const double tan22 = std::tan(std::numbers::pi / 8.0);
  const double tan67 = std::tan(3.0 * std::numbers::pi / 8.0);

  // 0 = suppressed, 1 = weak, 2 = strong.
  ByteImage cls(w, h, 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 1; y < h - 1; ++y)
    for (int x = 1; x < w - 1; ++x) {
      const double m = mag(x, y);
      if (m < low) continue;
      const double ax = std::abs(gx(x, y));
      const double ay = std::abs(gy(x, y));
      double before = 0.0, after = 0.0;
      if (ay <= ax * tan22) {
        before = mag(x - 1, y);
        after = mag(x + 1, y);
      } else if (ay > ax * tan67) {
        before = mag(x, y - 1);
        after = mag(x, y + 1);
      } else if (gx(x, y) * gy(x, y) > 0.0) {
        before = mag(x - 1, y - 1);
        after = mag(x + 1, y + 1);
      } else {
        before = mag(x + 1, y - 1);
        after = mag(x - 1, y + 1);
      }
      if (!(m > before && m >= after)) continue;
      if (m >= high) {
        cls(x, y) = 2;
        stack.emplace_back(x, y);
      } else {
        cls(x, y) = 1;
      }
    }
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    if (edges(x, y)) continue;
    edges(x, y) = 1;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = x + dx;
        const int ny = y + dy;
        if (nx < 1 || ny < 1 || nx >= w - 1 || ny >= h - 1) continue;
        if (cls(nx, ny) && !edges(nx, ny)) stack.emplace_back(nx, ny);
      }
  }
  return edges;
}

double canny_edge_density(const GrayImage& gray) {
  const ByteImage e = canny_edges(gray);
  const auto count = std::count(e.data().begin(), e.data().end(), std::uint8_t{1});
  return static_cast<double>(count) / static_cast<double>(e.size());
}

double histogram_uniformity(const GrayImage& gray) {
  if (gray.empty()) throw RefineError("histogram_uniformity needs a nonempty image");
  std::array<std::size_t, 256> bins{};
  for (double v : gray.data()) {
    const int b = std::clamp(static_cast<int>(std::floor(v * 256.0)), 0, 255);
    ++bins[static_cast<std::size_t>(b)];
  }
  return static_cast<double>(*std::max_element(bins.begin(), bins.end())) / static_cast<double>(gray.size());
}

double center_saliency(const GrayImage& gray, double eps) {
  if (gray.empty()) throw RefineError("center_saliency needs a nonempty image");
  const int cw = std::max(1, gray.width() / 2);
  const int ch = std::max(1, gray.height() / 2);
  const int ox = (gray.width() - cw) / 2;
  const int oy = (gray.height() - ch) / 2;
  double center = 0.0;
  for (int y = oy; y < oy + ch; ++y)
    for (int x = ox; x < ox + cw; ++x) center += gray(x, y);
  center /= static_cast<double>(cw) * static_cast<double>(ch);
  const double global = std::accumulate(gray.data().begin(), gray.data().end(), 0.0) / static_cast<double>(gray.size());
  return (center + eps) / (global + eps);
}

ByteImage quantize(const GrayImage& gray) {
  ByteImage out(gray.width(), gray.height());
  for (std::size_t i = 0; i < gray.size(); ++i)
    out.data()[i] = static_cast<std::uint8_t>(std::clamp(std::lround(gray.data()[i] * 255.0), 0L, 255L));
  return out;
}

std::vector<Keypoint> fast_keypoints(const ByteImage& image, int threshold, bool nonmax) {
  const int w = image.width();
  const int h = image.height();
  std::vector<Keypoint> out;
  if (w < 7 || h < 7) return out;
  Plane<int> score(w, h, 0);
  for (int y = 3; y < h - 3; ++y)
    for (int x = 3; x < w - 3; ++x) score(x, y) = fast_score(image, x, y, threshold);
  for (int y = 3; y < h - 3; ++y)
    for (int x = 3; x < w - 3; ++x) {
      const int s = score(x, y);
      if (s == 0) continue;
      if (nonmax) {
        bool peak = true;
        for (int dy = -1; dy <= 1 && peak; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            if ((dx || dy) && score(x + dx, y + dy) >= s) {
              peak = false;
              break;
            }
        if (!peak) continue;
      }
      out.push_back({x, y, s});
    }
  return out;
}

std::vector<MserRegion> mser_regions(const ByteImage& image, const MserParams& params) {
  std::vector<MserRegion> out;
  if (image.empty()) return out;
  mser_pass(image, false, params, out);
  mser_pass(image, true, params, out);
  return out;
}

double region_solidity(const ByteImage& image, const MserRegion& region) {
  const int w = image.width();
  auto inside = [&](int x, int y) {
    const int v = image(x, y);
    return region.bright ? v >= region.level : v <= region.level;
  };
  std::vector<char> seen(static_cast<std::size_t>((region.x1 - region.x0 + 1) * (region.y1 - region.y0 + 1)), 0);
  const int bw = region.x1 - region.x0 + 1;
  auto idx = [&](int x, int y) { return static_cast<std::size_t>((y - region.y0) * bw + (x - region.x0)); };
  std::vector<int> row_min(static_cast<std::size_t>(region.y1 - region.y0 + 1), std::numeric_limits<int>::max());
  std::vector<int> row_max(row_min.size(), std::numeric_limits<int>::min());
  std::vector<std::pair<int, int>> stack{{region.seed_x, region.seed_y}};
  seen[idx(region.seed_x, region.seed_y)] = 1;
  long count = 0;
  while (!stack.empty()) {
    auto [x, y] = stack.back();
    stack.pop_back();
    ++count;
    auto& lo = row_min[static_cast<std::size_t>(y - region.y0)];
    auto& hi = row_max[static_cast<std::size_t>(y - region.y0)];
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    const std::array<std::pair<int, int>, 4> nb{{{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}}};
    for (auto [nx, ny] : nb) {
      if (nx < region.x0 || ny < region.y0 || nx > region.x1 || ny > region.y1 || nx >= w) continue;
      if (seen[idx(nx, ny)] || !inside(nx, ny)) continue;
      seen[idx(nx, ny)] = 1;
      stack.emplace_back(nx, ny);
    }
  }
  std::vector<std::pair<long, long>> corners;
  for (std::size_t r = 0; r < row_min.size(); ++r) {
    if (row_min[r] > row_max[r]) continue;
    const long y = region.y0 + static_cast<long>(r);
    for (long x : {static_cast<long>(row_min[r]), static_cast<long>(row_max[r]) + 1}) {
      corners.emplace_back(x, y);
      corners.emplace_back(x, y + 1);
    }
  }
  const double hull = hull_area(std::move(corners));
  return hull > 0.0 ? static_cast<double>(count) / hull : 0.0;
}

TextDetection detect_text_details(const GrayImage& gray, const TextParams& params) {
  if (gray.width() < 16 || gray.height() < 16)
    throw RefineError("detect_text needs at least 16x16 pixels, got " + std::to_string(gray.width()) +
                      "x" + std::to_string(gray.height()));
  const ByteImage q = quantize(gray);
  const auto regions = mser_regions(q, params.mser);
  TextDetection det;
  det.mser_count = static_cast<int>(regions.size());

  const int w = q.width();
  const int h = q.height();
  // Prefix sums of keypoint positions for box counts.
  Plane<int> integral(w + 1, h + 1, 0);
  for (const auto& kp : fast_keypoints(q, params.fast_threshold, true)) integral(kp.x + 1, kp.y + 1) += 1;
  for (int y = 1; y <= h; ++y)
    for (int x = 1; x <= w; ++x) integral(x, y) += integral(x - 1, y) + integral(x, y - 1) - integral(x - 1, y - 1);

  std::set<std::tuple<int, int, int, int>> boxes;
  for (const auto& r : regions) {
    const double bw = r.x1 - r.x0 + 1;
    const double bh = r.y1 - r.y0 + 1;
    const double aspect = bw / bh;
    if (aspect < params.min_aspect || aspect > params.max_aspect) continue;
    if (!boxes.emplace(r.x0, r.y0, r.x1, r.y1).second) continue;
    if (region_solidity(q, r) < params.min_solidity) continue;
    ++det.candidate_count;
    const int inside = integral(r.x1 + 1, r.y1 + 1) - integral(r.x0, r.y1 + 1) - integral(r.x1 + 1, r.y0) + integral(r.x0, r.y0);
    if (inside >= params.min_keypoints_per_region) ++det.verified_count;
  }
  det.has_text = det.verified_count >= params.min_regions;
  return det;
}

bool detect_text(const GrayImage& gray) { return detect_text_details(gray).has_text; }

std::string_view to_string(DropReason reason) {
  switch (reason) {
    case DropReason::none: return "none";
    case DropReason::low_light: return "low_light";
    case DropReason::blurry: return "blurry";
    case DropReason::uniform: return "uniform";
    case DropReason::non_salient: return "non_salient";
  }
  return "none";
}

QualityReport quality_gate(const GrayImage& gray, std::int64_t sample_index,
                           const QualityThresholds& t) {
  if (gray.empty()) throw RefineError("quality_gate needs a nonempty image");
  QualityReport r;
  r.sample_index = sample_index;
  const double n = static_cast<double>(gray.size());
  r.mean_gray = std::accumulate(gray.data().begin(), gray.data().end(), 0.0) / n;
  double ss = 0.0;
  for (double v : gray.data()) ss += (v - r.mean_gray) * (v - r.mean_gray);
  r.var_gray = ss / n;
  r.laplacian_var = laplacian_variance(gray);
  r.edge_density = canny_edge_density(gray);
  r.hist_peak_mass = histogram_uniformity(gray);
  r.saliency_ratio = center_saliency(gray);
  r.has_text = gray.width() >= 16 && gray.height() >= 16 && detect_text(gray);

  if (!r.has_text && r.mean_gray < t.low_light_mean && r.var_gray < t.low_light_var)
    r.drop_reason = DropReason::low_light;
  else if (r.laplacian_var < t.blur_laplacian_var && r.edge_density < t.blur_edge_density)
    r.drop_reason = DropReason::blurry;
  else if (!r.has_text && r.hist_peak_mass > t.uniform_peak_mass)
    r.drop_reason = DropReason::uniform;
  else if (r.saliency_ratio < t.saliency_min || r.saliency_ratio > t.saliency_max)
    r.drop_reason = DropReason::non_salient;
  r.keep = r.drop_reason == DropReason::none;
  return r;
}

QualityReport quality_gate(const SampledFrame& frame, const QualityThresholds& thresholds) {
  return quality_gate(to_grayscale(frame.pixels), frame.sample_index, thresholds);
}

double ssim(const GrayImage& a, const GrayImage& b) {
  if (a.width() != b.width() || a.height() != b.height())
    throw RefineError("ssim dimension mismatch: " + std::to_string(a.width()) + "x" + std::to_string(a.height()) +
                      " vs " + std::to_string(b.width()) + "x" + std::to_string(b.height()));
  require_size(a, 11, "ssim");
  const auto k = gaussian_kernel(11, 1.5);
  GrayImage aa(a.width(), a.height()), bb(a.width(), a.height()), ab(a.width(), a.height());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa.data()[i] = a.data()[i] * a.data()[i];
    bb.data()[i] = b.data()[i] * b.data()[i];
    ab.data()[i] = a.data()[i] * b.data()[i];
  }
  const GrayImage mu_a = blur_valid(a, k);
  const GrayImage mu_b = blur_valid(b, k);
  const GrayImage e_aa = blur_valid(aa, k);
  const GrayImage e_bb = blur_valid(bb, k);
  const GrayImage e_ab = blur_valid(ab, k);
  constexpr double c1 = 0.01 * 0.01;
  constexpr double c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a.data()[i];
    const double mb = mu_b.data()[i];
    const double va = e_aa.data()[i] - ma * ma;
    const double vb = e_bb.data()[i] - mb * mb;
    const double cov = e_ab.data()[i] - ma * mb;
    total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return std::clamp(total / static_cast<double>(mu_a.size()), -1.0, 1.0);
}

GrayImage resize_area(const GrayImage& gray, int width, int height) {
  if (width <= 0 || height <= 0) throw RefineError("resize target must be positive");
  if (gray.empty()) throw RefineError("cannot resize an empty image");
  // weights[i] = list of (source index, weight) for output index i.
  auto axis = [](int src, int dst) {
    std::vector<std::vector<std::pair<int, double>>> taps(static_cast<std::size_t>(dst));
    const double scale = static_cast<double>(src) / static_cast<double>(dst);
    for (int i = 0; i < dst; ++i) {
      const double s0 = i * scale;
      const double s1 = (i + 1) * scale;
      for (int j = static_cast<int>(std::floor(s0)); j < std::min(src, static_cast<int>(std::ceil(s1))); ++j) {
        const double overlap = std::min<double>(s1, j + 1) - std::max<double>(s0, j);
        if (overlap > 0.0) taps[static_cast<std::size_t>(i)].emplace_back(j, overlap / scale);
      }
    }
    return taps;
  };
  const auto tx = axis(gray.width(), width);
  const auto ty = axis(gray.height(), height);
  GrayImage tmp(width, gray.height());
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (auto [j, wgt] : tx[static_cast<std::size_t>(x)]) acc += wgt * gray(j, y);
      tmp(x, y) = acc;
    }
  GrayImage out(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double acc = 0.0;
      for (auto [j, wgt] : ty[static_cast<std::size_t>(y)]) acc += wgt * tmp(x, j);
      out(x, y) = acc;
    }
  return out;
}

DedupResult dedup(const std::vector<DedupItem>& items, double threshold) {
  DedupResult result;
  struct Kept {
    std::size_t item;
    GrayImage small;
  };
  std::vector<Kept> stack;
  for (std::size_t i = 0; i < items.size(); ++i) {
    Kept cur{i, resize_area(items[i].gray, kDedupSize, kDedupSize)};
    for (;;) {
      if (stack.empty()) {
        stack.push_back(std::move(cur));
        break;
      }
      const Kept& top = stack.back();
      const double s = ssim(top.small, cur.small);
      if (s < threshold) {
        stack.push_back(std::move(cur));
        break;
      }
      const auto& older = items[top.item];
      const auto& newer = items[cur.item];
      if (newer.laplacian_var > older.laplacian_var) {
        result.decisions.push_back({newer.sample_index, older.sample_index, s});
        stack.pop_back();
        continue;
      }
      result.decisions.push_back({older.sample_index, newer.sample_index, s});
      break;
    }
  }
  for (const auto& k : stack) result.kept.push_back(items[k.item].sample_index);
  return result;
}

}  // namespace tkf
