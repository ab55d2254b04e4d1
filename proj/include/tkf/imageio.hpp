#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "tkf/image.hpp"

namespace tkf {

RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);
std::vector<std::uint8_t> encode_png(const RgbImage& image);
RgbImage decode_png(const std::vector<std::uint8_t>& bytes);

void write_gray_png(const std::filesystem::path& path, const GrayImage& image);

}  // namespace tkf
