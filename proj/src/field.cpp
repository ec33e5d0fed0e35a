#include "sdrpn/field.hpp"

namespace sdrpn {

namespace {

struct Plane {
  std::size_t rows, cols, offset;
};

Plane plane_of(const Grid& g, std::size_t index) {
  if (g.ndim() == 2) {
    if (index != 0) throw std::out_of_range("2-D grid has a single plane");
    return {g.dim(0), g.dim(1), 0};
  }
  if (g.ndim() == 3) {
    if (index >= g.dim(0))
      throw std::out_of_range("plane " + std::to_string(index) + " out of range for " + std::to_string(g.dim(0)));
    return {g.dim(1), g.dim(2), index * g.dim(1) * g.dim(2)};
  }
  throw GridError(GridError::Kind::bad_shape, "expected a [H,W] or [N,H,W] grid");
}

template <class T>
Grid stack(const std::vector<Field2D<T>>& maps) {
  if (maps.empty()) throw std::invalid_argument("cannot stack zero maps");
  std::vector<T> all;
  all.reserve(maps.size() * maps[0].size());
  for (const auto& m : maps) {
    if (m.rows != maps[0].rows || m.cols != maps[0].cols) throw std::invalid_argument("stacked maps differ in shape");
    all.insert(all.end(), m.data.begin(), m.data.end());
  }
  return Grid(Shape{static_cast<std::uint32_t>(maps.size()), static_cast<std::uint32_t>(maps[0].rows),
                    static_cast<std::uint32_t>(maps[0].cols)},
              std::move(all));
}

}  // namespace

RealMap real_map_from_grid(const Grid& g, std::size_t index) {
  const auto p = plane_of(g, index);
  const auto all = g.to_f64();
  return RealMap(p.rows, p.cols,
                 std::vector<double>(all.begin() + static_cast<std::ptrdiff_t>(p.offset),
                                     all.begin() + static_cast<std::ptrdiff_t>(p.offset + p.rows * p.cols)));
}

LabelField label_field_from_grid(const Grid& g, std::size_t index) {
  const auto p = plane_of(g, index);
  const auto v = g.values<std::int8_t>();
  return LabelField(p.rows, p.cols, std::vector<std::int8_t>(v.begin() + static_cast<std::ptrdiff_t>(p.offset),
                                                             v.begin() + static_cast<std::ptrdiff_t>(p.offset + p.rows * p.cols)));
}

BinaryMask binary_mask_from_grid(const Grid& g) {
  const auto p = plane_of(g, 0);
  const auto v = g.values<std::int8_t>();
  BinaryMask m(p.rows, p.cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = v[i] != 0 ? 1 : 0;
  return m;
}

Grid to_grid(const RealMap& m) {
  return Grid(Shape{static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, m.data);
}

Grid to_grid(const BinaryMask& m) {
  std::vector<std::int8_t> v(m.data.begin(), m.data.end());
  return Grid(Shape{static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, std::move(v));
}

Grid to_grid(const LabelField& m) {
  return Grid(Shape{static_cast<std::uint32_t>(m.rows), static_cast<std::uint32_t>(m.cols)}, m.data);
}

Grid stack_to_grid(const std::vector<RealMap>& maps) { return stack(maps); }
Grid stack_to_grid(const std::vector<LabelField>& maps) { return stack(maps); }

}  // namespace sdrpn
