#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace subflow {

// Row-major 2D grid. The element at (x, y) lives at data[y * width + x].
template <typename T>
struct GridT {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  GridT() = default;
  GridT(int w, int h, T fill = T{})
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(int w, int h) const noexcept { return width == w && height == h; }
  template <typename U>
  bool same_shape(const GridT<U>& other) const noexcept {
    return width == other.width && height == other.height;
  }

  T& operator()(int x, int y) { return data[static_cast<std::size_t>(y) * width + x]; }
  const T& operator()(int x, int y) const { return data[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const GridT&) const = default;
};

using Grid = GridT<double>;
using MaskGrid = GridT<std::uint8_t>;

}  // namespace subflow
