#include "tkf/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/videoio.hpp>

#include "tkf/cv_bridge.hpp"
#include "tkf/imageio.hpp"

namespace fs = std::filesystem;

namespace tkf {
namespace {

std::vector<fs::path> list_sequence_frames(const fs::path& dir) {
  static const std::regex kFrameName(R"(^\d{6}\.png$)");
  std::vector<fs::path> frames;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (std::regex_match(entry.path().filename().string(), kFrameName))
      frames.push_back(entry.path());
  }
  std::sort(frames.begin(), frames.end());
  return frames;
}

VideoMeta open_sequence(const fs::path& dir) {
  VideoMeta meta;
  meta.kind = SourceKind::image_sequence;
  meta.path = dir.string();
  meta.video_id = fs::absolute(dir).lexically_normal().filename().string();
  if (meta.video_id.empty()) meta.video_id = fs::absolute(dir).parent_path().filename().string();

  const fs::path meta_path = dir / "meta.json";
  if (!fs::exists(meta_path)) throw IngestError("missing meta.json in " + dir.string());
  nlohmann::json j;
  try {
    std::ifstream in(meta_path);
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("malformed meta.json: " + std::string(e.what()));
  }
  if (!j.contains("fps") || !j["fps"].is_number())
    throw IngestError("meta.json must declare a numeric \"fps\"");
  meta.fps = j["fps"].get<double>();
  if (!(meta.fps > 0.0) || !std::isfinite(meta.fps)) throw IngestError("invalid frame rate");

  const auto frames = list_sequence_frames(dir);
  if (frames.empty()) throw IngestError("empty stream: " + dir.string());
  meta.n_source_frames = static_cast<std::int64_t>(frames.size());
  const cv::Mat first = cv::imread(frames.front().string(), cv::IMREAD_COLOR);
  if (first.empty()) throw IngestError("undecodable frame: " + frames.front().string());
  meta.width = first.cols;
  meta.height = first.rows;
  meta.duration = static_cast<double>(meta.n_source_frames) / meta.fps;
  return meta;
}

VideoMeta open_container(const fs::path& file) {
  VideoMeta meta;
  meta.kind = SourceKind::container;
  meta.path = file.string();
  meta.video_id = file.stem().string();

  cv::VideoCapture cap(file.string());
  if (!cap.isOpened()) throw IngestError("undecodable video: " + file.string());
  meta.fps = cap.get(cv::CAP_PROP_FPS);
  meta.width = static_cast<int>(cap.get(cv::CAP_PROP_FRAME_WIDTH));
  meta.height = static_cast<int>(cap.get(cv::CAP_PROP_FRAME_HEIGHT));
  const double count = cap.get(cv::CAP_PROP_FRAME_COUNT);
  meta.n_source_frames = count > 0 ? static_cast<std::int64_t>(std::llround(count)) : 0;
  if (meta.n_source_frames == 0) throw IngestError("empty stream: " + file.string());
  if (!(meta.fps > 0.0) || !std::isfinite(meta.fps)) throw IngestError("invalid frame rate");
  if (meta.width <= 0 || meta.height <= 0) throw IngestError("undecodable video: " + file.string());
  meta.duration = static_cast<double>(meta.n_source_frames) / meta.fps;
  return meta;
}

}  // namespace

VideoMeta open_video(const fs::path& path) {
  std::error_code ec;
  if (!fs::exists(path, ec)) throw IngestError("file not found: " + path.string());
  if (fs::is_directory(path, ec)) return open_sequence(path);
  return open_container(path);
}

std::vector<std::int64_t> sample_source_indices(const VideoMeta& meta, double rate) {
  if (!(rate > 0.0) || !std::isfinite(rate)) throw IngestError("sampling rate must be positive");
  if (rate > meta.fps + 1e-9) throw IngestError("sampling rate exceeds source fps");
  std::vector<std::int64_t> indices;
  for (std::int64_t k = 0;; ++k) {
    const double t = static_cast<double>(k) / rate;
    const auto idx = static_cast<std::int64_t>(std::llround(t * meta.fps));
    if (idx >= meta.n_source_frames) break;
    indices.push_back(idx);
  }
  return indices;
}

std::vector<SampledFrame> sample_frames(const VideoMeta& meta, double rate) {
  const auto indices = sample_source_indices(meta, rate);
  std::vector<SampledFrame> frames;
  frames.reserve(indices.size());

  auto make_frame = [&](std::size_t k, RgbImage pixels) {
    SampledFrame f;
    f.video_id = meta.video_id;
    f.source_index = indices[k];
    f.sample_index = static_cast<std::int64_t>(k);
    f.timestamp = static_cast<double>(indices[k]) / meta.fps;
    f.pixels = std::move(pixels);
    return f;
  };

  if (meta.kind == SourceKind::image_sequence) {
    const auto files = list_sequence_frames(meta.path);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const auto idx = static_cast<std::size_t>(indices[k]);
      if (idx >= files.size())
        throw IngestError("decode failure at source_index " + std::to_string(indices[k]));
      const cv::Mat bgr = cv::imread(files[idx].string(), cv::IMREAD_COLOR);
      if (bgr.empty())
        throw IngestError("decode failure at source_index " + std::to_string(indices[k]));
      frames.push_back(make_frame(k, from_bgr_mat(bgr)));
    }
    return frames;
  }

  cv::VideoCapture cap(meta.path);
  if (!cap.isOpened()) throw IngestError("undecodable video: " + meta.path);
  std::int64_t position = 0;  // index of the next frame grab() returns
  cv::Mat bgr;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::int64_t target = indices[k];
    while (position <= target) {
      if (!cap.grab())
        throw IngestError("decode failure at source_index " + std::to_string(position));
      ++position;
    }
    if (!cap.retrieve(bgr) || bgr.empty())
      throw IngestError("decode failure at source_index " + std::to_string(target));
    frames.push_back(make_frame(k, from_bgr_mat(bgr)));
  }
  return frames;
}

GrayImage to_grayscale(const RgbImage& image) {
  GrayImage gray(image.width(), image.height());
  auto& out = gray.data();
  const auto& px = image.bytes();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double luma = (0.299 * px[3 * i] + 0.587 * px[3 * i + 1] + 0.114 * px[3 * i + 2]) / 255.0;
    out[i] = std::min(luma, 1.0);
  }
  return gray;
}

}  // namespace tkf
