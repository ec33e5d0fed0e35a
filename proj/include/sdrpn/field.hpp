// Row-major 2-D token field, the in-memory form of every H x W map.

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdrpn/grid.hpp"

namespace sdrpn {

template <class T>
struct Field2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Field2D() = default;
  Field2D(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}
  Field2D(std::size_t r, std::size_t c, std::vector<T> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw std::invalid_argument("Field2D: " + std::to_string(data.size()) + " values for " +
                                                          std::to_string(r) + "x" + std::to_string(c));
  }

  std::size_t size() const noexcept { return data.size(); }
  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Field2D&, const Field2D&) = default;
};

using RealMap = Field2D<double>;
using BinaryMask = Field2D<std::uint8_t>;
using LabelField = Field2D<std::int8_t>;

/// Slice `index` of a [N, H, W] grid (or the whole grid when it is [H, W]) as doubles.
RealMap real_map_from_grid(const Grid& g, std::size_t index = 0);
LabelField label_field_from_grid(const Grid& g, std::size_t index = 0);
BinaryMask binary_mask_from_grid(const Grid& g);

Grid to_grid(const RealMap& m);
Grid to_grid(const BinaryMask& m);
Grid to_grid(const LabelField& m);

/// Stack equally sized maps into a [N, H, W] grid.
Grid stack_to_grid(const std::vector<RealMap>& maps);
Grid stack_to_grid(const std::vector<LabelField>& maps);

}  // namespace sdrpn
