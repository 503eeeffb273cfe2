#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace symrl {

// Row index grows southward, column index grows eastward.
struct Cell {
  int r = 0;
  int c = 0;

  friend bool operator==(const Cell&, const Cell&) = default;
};

// Square m x m raster stored row-major.
template <typename T>
class SquareGrid {
 public:
  SquareGrid() = default;
  explicit SquareGrid(int m, T fill = T{})
      : m_(m), data_(static_cast<std::size_t>(m) * m, fill) {
    if (m < 0) throw std::invalid_argument("grid side must be non-negative");
  }

  int side() const { return m_; }
  std::size_t size() const { return data_.size(); }

  bool contains(Cell cell) const {
    return cell.r >= 0 && cell.c >= 0 && cell.r < m_ && cell.c < m_;
  }

  T& operator()(int r, int c) { return data_[index(r, c)]; }
  const T& operator()(int r, int c) const { return data_[index(r, c)]; }
  T& operator[](Cell cell) { return data_[index(cell.r, cell.c)]; }
  const T& operator[](Cell cell) const { return data_[index(cell.r, cell.c)]; }

  std::size_t index(int r, int c) const {
    return static_cast<std::size_t>(r) * m_ + c;
  }

  const std::vector<T>& data() const { return data_; }
  std::vector<T>& data() { return data_; }

  friend bool operator==(const SquareGrid&, const SquareGrid&) = default;

 private:
  int m_ = 0;
  std::vector<T> data_;
};

using BoolGrid = SquareGrid<std::uint8_t>;

inline std::size_t count_set(const BoolGrid& grid) {
  std::size_t n = 0;
  for (auto v : grid.data()) n += v != 0;
  return n;
}

}  // namespace symrl
