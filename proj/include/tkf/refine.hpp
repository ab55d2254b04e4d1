#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tkf/image.hpp"
#include "tkf/ingest.hpp"

namespace tkf {

class RefineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using ByteImage = Plane<std::uint8_t>;

/// Variance of the 4-neighbor Laplacian over interior pixels. Needs 3x3.
double laplacian_variance(const GrayImage& gray);

/// Canny edge map (5x5 Gaussian, sigma 1.4; Sobel; non-maximum suppression;
/// hysteresis with thresholds as fractions of the peak gradient). Border
/// pixels are never edges. Needs 5x5.
ByteImage canny_edges(const GrayImage& gray, double low_ratio = 0.1, double high_ratio = 0.2);

/// Fraction of pixels marked by canny_edges.
double canny_edge_density(const GrayImage& gray);

/// Largest bin mass of the 256-bin gray histogram.
double histogram_uniformity(const GrayImage& gray);

/// (mean of centered half-size crop + eps) / (global mean + eps).
double center_saliency(const GrayImage& gray, double eps = 1e-6);

/// Rounds [0, 1] intensities to 8 bits.
ByteImage quantize(const GrayImage& gray);

struct Keypoint {
  int x = 0;
  int y = 0;
  int score = 0;
};

/// FAST-9 on the 16-pixel Bresenham circle of radius 3. With nonmax, a corner
/// survives only if its score beats all eight neighbors.
std::vector<Keypoint> fast_keypoints(const ByteImage& image, int threshold = 20, bool nonmax = true);

struct MserParams {
  int delta = 5;
  double min_area = 0.0001;  // fraction of the image
  double max_area = 0.05;
  double max_variation = 0.25;
};

struct MserRegion {
  int level = 0;
  bool bright = false;  // true for regions brighter than their surround
  int area = 0;
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive bounding box
  double variation = 0.0;
  int seed_x = 0, seed_y = 0;  // any member pixel
};

/// Maximally stable extremal regions of both polarities, 4-connected.
/// Variation is (|R at level+delta| - |R|) / |R|; a region is kept when its
/// variation is no larger than its parent's, strictly smaller than each
/// child's, and within the area and variation limits.
std::vector<MserRegion> mser_regions(const ByteImage& image, const MserParams& params = {});

struct TextParams {
  MserParams mser;
  double min_aspect = 0.1;
  double max_aspect = 10.0;
  double min_solidity = 0.3;
  int fast_threshold = 20;
  int min_keypoints_per_region = 2;
  int min_regions = 3;
};

struct TextDetection {
  int mser_count = 0;
  int candidate_count = 0;  // after the geometry filters
  int verified_count = 0;   // candidates holding enough keypoints
  bool has_text = false;
};

/// Region area over the area of the convex hull of its pixel squares.
double region_solidity(const ByteImage& image, const MserRegion& region);

TextDetection detect_text_details(const GrayImage& gray, const TextParams& params = {});
/// Needs 16x16.
bool detect_text(const GrayImage& gray);

enum class DropReason { none, low_light, blurry, uniform, non_salient };
std::string_view to_string(DropReason reason);

struct QualityThresholds {
  double low_light_mean = 0.08;
  double low_light_var = 0.005;
  double blur_laplacian_var = 1e-4;
  double blur_edge_density = 0.01;
  double uniform_peak_mass = 0.95;
  double saliency_min = 0.2;
  double saliency_max = 5.0;
  bool operator==(const QualityThresholds&) const = default;
};

struct QualityReport {
  std::int64_t sample_index = 0;
  double mean_gray = 0.0;
  double var_gray = 0.0;
  double laplacian_var = 0.0;
  double edge_density = 0.0;
  double hist_peak_mass = 0.0;
  double saliency_ratio = 0.0;
  bool has_text = false;
  bool keep = true;
  DropReason drop_reason = DropReason::none;
};

/// Reasons are tested in the order low_light, blurry, uniform, non_salient;
/// detected text waives low_light and uniform.
QualityReport quality_gate(const GrayImage& gray, std::int64_t sample_index,
                           const QualityThresholds& thresholds = {});
QualityReport quality_gate(const SampledFrame& frame, const QualityThresholds& thresholds = {});

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5, K1 0.01, K2 0.03,
/// L 1). Needs equal sizes of at least 11x11.
double ssim(const GrayImage& a, const GrayImage& b);

/// Box-filter resampling; every output pixel is the overlap-weighted mean of
/// the source pixels it covers.
GrayImage resize_area(const GrayImage& gray, int width, int height);

inline constexpr int kDedupSize = 128;
inline constexpr double kDedupThreshold = 0.8;

struct DedupItem {
  std::int64_t sample_index = 0;
  GrayImage gray;  // any size; resized internally
  double laplacian_var = 0.0;
};

struct DedupDecision {
  std::int64_t kept = 0;
  std::int64_t dropped = 0;
  double ssim = 0.0;
};

struct DedupResult {
  std::vector<std::int64_t> kept;  // sample indices in input order
  std::vector<DedupDecision> decisions;
};

/// Temporal fold against the last kept frame. On a near-duplicate the frame
/// with lower laplacian_var goes (ties drop the later one). When the kept
/// tail is replaced, the newcomer is re-checked against the frame before it,
/// so no adjacent kept pair reaches the threshold.
DedupResult dedup(const std::vector<DedupItem>& items, double threshold = kDedupThreshold);

}  // namespace tkf
