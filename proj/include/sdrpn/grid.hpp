// Dense row-major tensor container and the GRID binary file format.
//
// On-disk layout (all integers little-endian):
//   "GRID" | version u8 (=1) | dtype u8 | ndim u8 | ndim x u32 dims | payload
// dtype codes: 0 = f32, 1 = f64, 2 = i8.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace sdrpn {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i8 = 2 };

const char* dtype_name(DType t);

using Shape = std::vector<std::uint32_t>;

class GridError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, bad_version, unknown_dtype, bad_shape, truncated, trailing_bytes, type_mismatch };

  GridError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

template <class T>
concept GridScalar = std::is_same_v<T, float> || std::is_same_v<T, double> || std::is_same_v<T, std::int8_t>;

template <GridScalar T>
constexpr DType dtype_of() {
  if constexpr (std::is_same_v<T, float>) return DType::f32;
  else if constexpr (std::is_same_v<T, double>) return DType::f64;
  else return DType::i8;
}

class Grid {
 public:
  using Storage = std::variant<std::vector<float>, std::vector<double>, std::vector<std::int8_t>>;

  Grid() : Grid(Shape{1}, std::vector<double>{0.0}) {}

  template <GridScalar T>
  Grid(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate();
  }

  /// Zero-filled grid of the given dtype.
  static Grid zeros(DType dtype, Shape shape);

  DType dtype() const noexcept { return static_cast<DType>(data_.index()); }
  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept;
  std::uint32_t dim(std::size_t i) const { return shape_.at(i); }

  template <GridScalar T>
  std::span<const T> values() const {
    if (dtype() != dtype_of<T>()) throw mismatch(dtype_of<T>());
    return std::get<std::vector<T>>(data_);
  }

  template <GridScalar T>
  std::span<T> values() {
    if (dtype() != dtype_of<T>()) throw mismatch(dtype_of<T>());
    return std::get<std::vector<T>>(data_);
  }

  /// Copy of the payload widened to double regardless of dtype.
  std::vector<double> to_f64() const;

  /// Bit-level equality: dtype, shape and payload bytes all identical.
  friend bool operator==(const Grid& a, const Grid& b);

 private:
  void validate() const;
  GridError mismatch(DType wanted) const;

  Shape shape_;
  Storage data_;
};

std::vector<std::uint8_t> encode_grid(const Grid& g);
Grid decode_grid(std::span<const std::uint8_t> bytes, const std::string& origin = "<memory>");

void write_grid(const Grid& g, const std::filesystem::path& path);
Grid read_grid(const std::filesystem::path& path);

/// 64-bit FNV-1a over a byte range; used for content hashes of checkpoints and artifacts.
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t hash_file(const std::filesystem::path& path);
std::string hex64(std::uint64_t v);

}  // namespace sdrpn
