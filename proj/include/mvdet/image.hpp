#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace mvdet {

// 8-bit interleaved RGB raster, row-major, origin at the top-left corner.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<uint8_t> data;

  ImageBuffer() = default;
  ImageBuffer(int w, int h, uint8_t fill = 0)
      : width(w), height(h), channels(3), data(size_t(w) * size_t(h) * 3, fill) {}

  bool valid() const {
    return width >= 1 && height >= 1 && channels == 3 &&
           data.size() == size_t(width) * size_t(height) * size_t(channels);
  }

  uint8_t& at(int x, int y, int c) {
    return data[(size_t(y) * size_t(width) + size_t(x)) * size_t(channels) + size_t(c)];
  }
  uint8_t at(int x, int y, int c) const {
    return data[(size_t(y) * size_t(width) + size_t(x)) * size_t(channels) + size_t(c)];
  }

  bool operator==(const ImageBuffer&) const = default;
};

}  // namespace mvdet
