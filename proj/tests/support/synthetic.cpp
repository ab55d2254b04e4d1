#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <unistd.h>

#include <opencv2/videoio.hpp>

#include "tkf/cv_bridge.hpp"
#include "tkf/imageio.hpp"

namespace tkf::testing {

namespace fs = std::filesystem;

std::vector<Scene> four_scenes() {
  return {{200, 60, 50, 0, 15.0}, {40, 170, 70, 1, 15.0}, {50, 80, 210, 2, 15.0}, {220, 200, 40, 3, 15.0}};
}

RgbImage scene_frame(const Scene& scene, int width, int height, std::uint32_t seed) {
  std::mt19937 rng(seed + static_cast<std::uint32_t>(scene.pattern) * 7919u);
  std::uniform_real_distribution<double> jitter(-0.08, 0.08);
  std::vector<double> blocks(64);
  for (auto& v : blocks) v = std::uniform_real_distribution<double>(0.45, 1.0)(rng);
  RgbImage img(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double t = 1.0;
      switch (scene.pattern) {
        case 0: t = ((x / 10 + y / 10) % 2) ? 1.0 : 0.55; break;
        case 1: t = 0.75 + 0.25 * std::sin(x * 0.45); break;
        case 2: t = 0.7 + 0.3 * std::cos(std::hypot(x - width / 2.0, y - height / 2.0) * 0.35); break;
        default: t = blocks[static_cast<std::size_t>((y * 8 / height) * 8 + (x * 8 / width))]; break;
      }
      t = std::clamp(t + jitter(rng), 0.0, 1.0);
      auto px = [&](std::uint8_t c) { return static_cast<std::uint8_t>(std::lround(c * t)); };
      img.set(x, y, px(scene.r), px(scene.g), px(scene.b));
    }
  return img;
}

void write_scene_video(const fs::path& path, const std::vector<Scene>& scenes, double fps, int width, int height) {
  cv::VideoWriter writer(path.string(), cv::VideoWriter::fourcc('M', 'J', 'P', 'G'), fps, cv::Size(width, height));
  if (!writer.isOpened()) throw std::runtime_error("cannot open video writer for " + path.string());
  for (const auto& s : scenes) {
    const cv::Mat frame = to_bgr_mat(scene_frame(s, width, height, 1234));
    const auto count = static_cast<int>(std::lround(s.seconds * fps));
    for (int i = 0; i < count; ++i) writer.write(frame);
  }
  writer.release();
}

void write_png_sequence(const fs::path& dir, const std::vector<RgbImage>& frames, double fps) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < frames.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.png", i);
    write_png(dir / name, frames[i]);
  }
  std::ofstream(dir / "meta.json") << "{\"fps\": " << fps << "}\n";
}

RgbImage random_rgb(int width, int height, std::mt19937& rng) {
  std::uniform_int_distribution<int> d(0, 255);
  RgbImage img(width, height);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(d(rng));
  return img;
}

GrayImage random_gray(int width, int height, std::mt19937& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  GrayImage img(width, height);
  for (auto& v : img.data()) v = d(rng);
  return img;
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("tkf_test_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace tkf::testing
