#include "tkf/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "tkf/cv_bridge.hpp"

namespace tkf {

cv::Mat to_bgr_mat(const RgbImage& image) {
  cv::Mat rgb(image.height(), image.width(), CV_8UC3,
              const_cast<std::uint8_t*>(image.bytes().data()));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  return bgr;
}

RgbImage from_bgr_mat(const cv::Mat& bgr) {
  if (bgr.type() != CV_8UC3) throw std::runtime_error("expected an 8-bit 3-channel image");
  RgbImage out(bgr.cols, bgr.rows);
  cv::Mat rgb(bgr.rows, bgr.cols, CV_8UC3, out.bytes().data());
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return out;
}

RgbImage read_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("cannot read image: " + path.string());
  return from_bgr_mat(bgr);
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  if (!cv::imwrite(path.string(), to_bgr_mat(image)))
    throw std::runtime_error("cannot write image: " + path.string());
}

std::vector<std::uint8_t> encode_png(const RgbImage& image) {
  std::vector<std::uint8_t> buf;
  if (!cv::imencode(".png", to_bgr_mat(image), buf))
    throw std::runtime_error("PNG encoding failed");
  return buf;
}

RgbImage decode_png(const std::vector<std::uint8_t>& bytes) {
  cv::Mat bgr = cv::imdecode(bytes, cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("PNG decoding failed");
  return from_bgr_mat(bgr);
}

void write_gray_png(const std::filesystem::path& path, const GrayImage& image) {
  cv::Mat m(image.height(), image.width(), CV_8UC1);
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x)
      m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(
          std::lround(std::clamp(image(x, y), 0.0, 1.0) * 255.0));
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write image: " + path.string());
}

}  // namespace tkf
