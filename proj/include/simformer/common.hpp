#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace simformer {

/// Label value for pixels without pixel-level annotation; also the
/// no-object class of unmatched proposals.
inline constexpr int kIgnoreId = 255;

using Rng = std::mt19937_64;

/// Dense row-major H×W×channels grid. Used for RGB images and label maps
/// outside of the tensor world (generation, I/O, evaluation).
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  int channels = 1;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, int c = 1, T fill = T{})
      : height(h), width(w), channels(c),
        data(static_cast<std::size_t>(h) * w * c, fill) {}

  T& at(int h, int w, int c = 0) {
    return data[(static_cast<std::size_t>(h) * width + w) * channels + c];
  }
  const T& at(int h, int w, int c = 0) const {
    return data[(static_cast<std::size_t>(h) * width + w) * channels + c];
  }
  std::size_t pixels() const { return static_cast<std::size_t>(height) * width; }
  bool same_shape(const Grid& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
  bool operator==(const Grid&) const = default;
};

/// RGB image, values in [0,1].
using Image = Grid<float>;
/// Per-pixel class IDs; kIgnoreId marks unannotated pixels.
using LabelMap = Grid<std::uint8_t>;

struct Pixel {
  int h = 0;
  int w = 0;
  bool operator==(const Pixel&) const = default;
};

}  // namespace simformer
