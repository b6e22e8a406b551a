#pragma once

#include <filesystem>

#include "hybridmap/geometry.hpp"

namespace hmap {

/// 16-bit grayscale PNG, depth in millimetres, 0 = hole. Depths are rounded to the nearest millimetre
/// and values beyond 65.535 m are stored as holes.
void write_depth_png(const std::filesystem::path& path, const DepthImage& depth);
DepthImage read_depth_png(const std::filesystem::path& path);

/// 8-bit grayscale PNG, 0 / 255.
void write_mask_png(const std::filesystem::path& path, const MaskImage& mask);
MaskImage read_mask_png(const std::filesystem::path& path);

void write_rgb_png(const std::filesystem::path& path, const RgbImage& rgb);
RgbImage read_rgb_png(const std::filesystem::path& path);

} // namespace hmap
