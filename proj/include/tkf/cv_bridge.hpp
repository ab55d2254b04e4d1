#pragma once

// Internal conversions between tkf images and OpenCV matrices. OpenCV is used
// only for container decoding, PNG codecs and text rendering.

#include <opencv2/core.hpp>

#include "tkf/image.hpp"

namespace tkf {

cv::Mat to_bgr_mat(const RgbImage& image);
RgbImage from_bgr_mat(const cv::Mat& bgr);

}  // namespace tkf
