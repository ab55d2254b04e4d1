#include "tkf/perceptual.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tkf {
namespace {

// D65 reference white, CIE 1931 2-degree observer.
constexpr double kWhiteX = 0.95047;
constexpr double kWhiteY = 1.00000;
constexpr double kWhiteZ = 1.08883;

constexpr double kEpsilon = 216.0 / 24389.0;  // (6/29)^3
constexpr double kKappa = 24389.0 / 27.0;     // (29/3)^3

const std::array<double, 256>& linear_lut() {
  static const std::array<double, 256> lut = [] {
    std::array<double, 256> t{};
    for (int i = 0; i < 256; ++i) {
      const double c = i / 255.0;
      t[i] = c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
    }
    return t;
  }();
  return lut;
}

double lab_f(double t) {
  return t > kEpsilon ? std::cbrt(t) : (kKappa * t + 16.0) / 116.0;
}

struct ChannelMoments {
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
};

ChannelMoments channel_moments(const std::vector<double>& v) {
  if (v.empty()) throw std::invalid_argument("color moments of an empty image");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  ChannelMoments m;
  if (*lo == *hi) {
    m.mean = *lo;
    return m;
  }
  const double n = static_cast<double>(v.size());
  double sum = 0.0;
  for (double x : v) sum += x;
  m.mean = sum / n;
  double m2 = 0.0, m3 = 0.0;
  for (double x : v) {
    const double d = x - m.mean;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  m.variance = m2;
  m.skewness = m2 > 0.0 ? m3 / std::pow(m2, 1.5) : 0.0;
  return m;
}

void accumulate_histogram(const std::vector<double>& values, double lo, double hi, int bins,
                          double* out) {
  const double scale = bins / (hi - lo);
  for (double v : values) {
    int bin = static_cast<int>(std::floor((v - lo) * scale));
    bin = std::clamp(bin, 0, bins - 1);
    out[bin] += 1.0;
  }
  const double n = static_cast<double>(values.size());
  for (int i = 0; i < bins; ++i) out[i] /= n;
}

}  // namespace

Lab srgb_to_lab(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const auto& lut = linear_lut();
  const double rl = lut[r], gl = lut[g], bl = lut[b];
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  const double fx = lab_f(x / kWhiteX);
  const double fy = lab_f(y / kWhiteY);
  const double fz = lab_f(z / kWhiteZ);
  Lab lab;
  lab.L = std::clamp(116.0 * fy - 16.0, 0.0, 100.0);
  lab.a = 500.0 * (fx - fy);
  lab.b = 200.0 * (fy - fz);
  return lab;
}

LabImage rgb_to_lab(const RgbImage& image) {
  LabImage lab;
  lab.width = image.width();
  lab.height = image.height();
  const std::size_t n = image.pixel_count();
  lab.L.resize(n);
  lab.a.resize(n);
  lab.b.resize(n);
  const auto& px = image.bytes();
  for (std::size_t i = 0; i < n; ++i) {
    const Lab c = srgb_to_lab(px[3 * i], px[3 * i + 1], px[3 * i + 2]);
    lab.L[i] = c.L;
    lab.a[i] = c.a;
    lab.b[i] = c.b;
  }
  return lab;
}

std::vector<double> lab_histograms(const LabImage& lab, int bins) {
  if (lab.pixel_count() == 0) throw std::invalid_argument("histogram of a zero-pixel image");
  if (bins <= 0) throw std::invalid_argument("bin count must be positive");
  std::vector<double> hist(3 * static_cast<std::size_t>(bins), 0.0);
  accumulate_histogram(lab.L, 0.0, 100.0, bins, hist.data());
  accumulate_histogram(lab.a, -128.0, 127.0, bins, hist.data() + bins);
  accumulate_histogram(lab.b, -128.0, 127.0, bins, hist.data() + 2 * bins);
  return hist;
}

std::array<double, kColorMomentCount> color_moments(const LabImage& lab) {
  std::array<double, kColorMomentCount> out{};
  const std::vector<double>* channels[3] = {&lab.L, &lab.a, &lab.b};
  for (int c = 0; c < 3; ++c) {
    const ChannelMoments m = channel_moments(*channels[c]);
    out[3 * c] = m.mean;
    out[3 * c + 1] = m.variance;
    out[3 * c + 2] = m.skewness;
  }
  return out;
}

double colorfulness(const LabImage& lab) {
  const ChannelMoments a = channel_moments(lab.a);
  const ChannelMoments b = channel_moments(lab.b);
  return std::sqrt(a.variance + b.variance) + 0.3 * std::sqrt(a.mean * a.mean + b.mean * b.mean);
}

std::vector<double> ColorFeature::vector() const {
  std::vector<double> v;
  v.reserve(kColorFeatureDim);
  v.insert(v.end(), histograms.begin(), histograms.end());
  v.insert(v.end(), moments.begin(), moments.end());
  v.push_back(colorfulness);
  return v;
}

ColorFeature color_feature(const RgbImage& image) {
  const LabImage lab = rgb_to_lab(image);
  ColorFeature f;
  f.histograms = lab_histograms(lab);
  f.moments = color_moments(lab);
  f.colorfulness = colorfulness(lab);
  return f;
}

}  // namespace tkf
