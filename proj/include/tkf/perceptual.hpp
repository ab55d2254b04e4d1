#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "tkf/image.hpp"

namespace tkf {

inline constexpr int kLabHistogramBins = 256;
inline constexpr std::size_t kColorMomentCount = 9;
/// 3 channel histograms x 256 bins + 9 moments + colorfulness.
inline constexpr std::size_t kColorFeatureDim = 3 * kLabHistogramBins + kColorMomentCount + 1;
static_assert(kColorFeatureDim == 778);

struct Lab {
  double L = 0.0;
  double a = 0.0;
  double b = 0.0;
};

/// Planar CIELAB image. L is clamped to [0, 100].
struct LabImage {
  int width = 0;
  int height = 0;
  std::vector<double> L;
  std::vector<double> a;
  std::vector<double> b;

  std::size_t pixel_count() const noexcept { return L.size(); }
};

/// sRGB (8-bit, standard transfer curve) -> XYZ (D65) -> CIELAB.
Lab srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b);
LabImage rgb_to_lab(const RgbImage& image);

/// Per-channel normalized histograms, concatenated as [L | a | b].
/// Bin ranges: L in [0, 100], a and b in [-128, 127]; out-of-range values
/// land in the edge bins. Throws on an empty image.
std::vector<double> lab_histograms(const LabImage& lab, int bins = kLabHistogramBins);

/// [mean_L, var_L, skew_L, mean_a, var_a, skew_a, mean_b, var_b, skew_b].
/// Population variance; skewness is 0 for a constant channel.
std::array<double, kColorMomentCount> color_moments(const LabImage& lab);

/// sqrt(var_a + var_b) + 0.3 * sqrt(mean_a^2 + mean_b^2).
double colorfulness(const LabImage& lab);

struct ColorFeature {
  std::vector<double> histograms;
  std::array<double, kColorMomentCount> moments{};
  double colorfulness = 0.0;

  /// Histograms, then moments, then colorfulness; length kColorFeatureDim.
  std::vector<double> vector() const;
};

ColorFeature color_feature(const RgbImage& image);

}  // namespace tkf
