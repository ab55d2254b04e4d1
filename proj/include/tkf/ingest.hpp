#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tkf/image.hpp"

namespace tkf {

class IngestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class SourceKind { container, image_sequence };

struct VideoMeta {
  std::string video_id;
  std::string path;
  double fps = 0.0;
  std::int64_t n_source_frames = 0;
  int width = 0;
  int height = 0;
  double duration = 0.0;
  SourceKind kind = SourceKind::container;
};

struct SampledFrame {
  std::string video_id;
  std::int64_t source_index = 0;
  std::int64_t sample_index = 0;
  double timestamp = 0.0;
  RgbImage pixels;
};

/// Probes a video container, or a directory of `%06d.png` frames with a
/// `meta.json` sidecar declaring {"fps": number}. No frames are decoded.
VideoMeta open_video(const std::filesystem::path& path);

/// Nearest source frame for each timestamp k / rate, k = 0, 1, ... while the
/// mapped index stays inside the stream.
std::vector<std::int64_t> sample_source_indices(const VideoMeta& meta, double rate);

/// Decodes the frames selected by sample_source_indices.
std::vector<SampledFrame> sample_frames(const VideoMeta& meta, double rate);

/// Rec.601 luma scaled to [0, 1].
GrayImage to_grayscale(const RgbImage& image);

}  // namespace tkf
