#pragma once

#include <filesystem>

#include "simformer/common.hpp"

namespace simformer::png {

/// 8-bit RGB; float channels are scaled by 255 and rounded.
void write_rgb(const std::filesystem::path& path, const Image& image);
/// 8-bit RGB from already quantized bytes (HWC).
void write_rgb_bytes(const std::filesystem::path& path, const Grid<std::uint8_t>& rgb);
/// 8-bit single channel.
void write_gray(const std::filesystem::path& path, const LabelMap& mask);

Image read_rgb(const std::filesystem::path& path);
LabelMap read_gray(const std::filesystem::path& path);

}  // namespace simformer::png
