#include "simformer/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace simformer::png {
namespace {

void write_image(const std::filesystem::path& path, int width, int height, png_uint_32 format,
                 const std::uint8_t* bytes) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes, 0, nullptr)) {
    throw std::runtime_error("io_error: cannot write " + path.string() + ": " + img.message);
  }
}

Grid<std::uint8_t> read_image(const std::filesystem::path& path, png_uint_32 format, int channels) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("io_error: cannot read " + path.string() + ": " + img.message);
  }
  img.format = format;
  Grid<std::uint8_t> out(static_cast<int>(img.height), static_cast<int>(img.width), channels);
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw std::runtime_error("io_error: cannot decode " + path.string() + ": " + msg);
  }
  return out;
}

}  // namespace

void write_rgb(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3) throw std::invalid_argument("write_rgb expects 3 channels");
  Grid<std::uint8_t> bytes(image.height, image.width, 3);
  std::transform(image.data.begin(), image.data.end(), bytes.data.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  write_rgb_bytes(path, bytes);
}

void write_rgb_bytes(const std::filesystem::path& path, const Grid<std::uint8_t>& rgb) {
  if (rgb.channels != 3) throw std::invalid_argument("write_rgb_bytes expects 3 channels");
  write_image(path, rgb.width, rgb.height, PNG_FORMAT_RGB, rgb.data.data());
}

void write_gray(const std::filesystem::path& path, const LabelMap& mask) {
  if (mask.channels != 1) throw std::invalid_argument("write_gray expects 1 channel");
  write_image(path, mask.width, mask.height, PNG_FORMAT_GRAY, mask.data.data());
}

Image read_rgb(const std::filesystem::path& path) {
  auto bytes = read_image(path, PNG_FORMAT_RGB, 3);
  Image out(bytes.height, bytes.width, 3);
  std::transform(bytes.data.begin(), bytes.data.end(), out.data.begin(),
                 [](std::uint8_t v) { return static_cast<float>(v) / 255.0f; });
  return out;
}

LabelMap read_gray(const std::filesystem::path& path) {
  return read_image(path, PNG_FORMAT_GRAY, 1);
}

}  // namespace simformer::png
