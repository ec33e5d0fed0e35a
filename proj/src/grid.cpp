#include "sdrpn/grid.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace sdrpn {

namespace {

constexpr std::uint8_t kVersion = 1;
constexpr std::size_t kMaxDims = 4;

std::size_t element_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i8: return 1;
  }
  return 0;
}

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

}  // namespace

const char* dtype_name(DType t) {
  switch (t) {
    case DType::f32: return "f32";
    case DType::f64: return "f64";
    case DType::i8: return "i8";
  }
  return "?";
}

Grid Grid::zeros(DType dtype, Shape shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  switch (dtype) {
    case DType::f32: return Grid(std::move(shape), std::vector<float>(n, 0.0f));
    case DType::f64: return Grid(std::move(shape), std::vector<double>(n, 0.0));
    case DType::i8: return Grid(std::move(shape), std::vector<std::int8_t>(n, 0));
  }
  throw GridError(GridError::Kind::unknown_dtype, "unknown dtype");
}

std::size_t Grid::size() const noexcept {
  std::size_t n = 1;
  for (auto d : shape_) n *= d;
  return n;
}

void Grid::validate() const {
  if (shape_.empty() || shape_.size() > kMaxDims)
    throw GridError(GridError::Kind::bad_shape, "grid must have 1-4 dimensions, got " + std::to_string(shape_.size()));
  for (auto d : shape_)
    if (d == 0) throw GridError(GridError::Kind::bad_shape, "zero-sized dimension in shape " + shape_str(shape_));
  std::size_t n = std::visit([](const auto& v) { return v.size(); }, data_);
  if (n != size())
    throw GridError(GridError::Kind::bad_shape,
                    "payload has " + std::to_string(n) + " elements but shape " + shape_str(shape_) + " needs " +
                        std::to_string(size()));
}

GridError Grid::mismatch(DType wanted) const {
  return GridError(GridError::Kind::type_mismatch,
                   std::string("grid holds ") + dtype_name(dtype()) + ", requested " + dtype_name(wanted));
}

std::vector<double> Grid::to_f64() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

bool operator==(const Grid& a, const Grid& b) {
  if (a.dtype() != b.dtype() || a.shape_ != b.shape_) return false;
  return std::visit(
      [&](const auto& va) {
        using V = std::decay_t<decltype(va)>;
        const auto& vb = std::get<V>(b.data_);
        return std::memcmp(va.data(), vb.data(), va.size() * sizeof(typename V::value_type)) == 0;
      },
      a.data_);
}

std::vector<std::uint8_t> encode_grid(const Grid& g) {
  std::vector<std::uint8_t> out;
  out.reserve(7 + 4 * g.ndim() + g.size() * element_size(g.dtype()));
  for (char c : {'G', 'R', 'I', 'D'}) out.push_back(static_cast<std::uint8_t>(c));
  out.push_back(kVersion);
  out.push_back(static_cast<std::uint8_t>(g.dtype()));
  out.push_back(static_cast<std::uint8_t>(g.ndim()));
  for (auto d : g.shape()) put_le<std::uint32_t>(out, d);
  switch (g.dtype()) {
    case DType::f32:
      for (float v : g.values<float>()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
      break;
    case DType::f64:
      for (double v : g.values<double>()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
      break;
    case DType::i8:
      for (std::int8_t v : g.values<std::int8_t>()) out.push_back(std::bit_cast<std::uint8_t>(v));
      break;
  }
  return out;
}

Grid decode_grid(std::span<const std::uint8_t> bytes, const std::string& origin) {
  using K = GridError::Kind;
  auto fail = [&](K k, const std::string& msg) { return GridError(k, origin + ": " + msg); };

  if (bytes.size() < 7) throw fail(K::truncated, "file shorter than GRID header");
  if (std::memcmp(bytes.data(), "GRID", 4) != 0) throw fail(K::bad_magic, "bad magic, expected \"GRID\"");
  if (bytes[4] != kVersion) throw fail(K::bad_version, "unsupported version " + std::to_string(bytes[4]));
  if (bytes[5] > 2) throw fail(K::unknown_dtype, "unknown dtype code " + std::to_string(bytes[5]));
  const auto dtype = static_cast<DType>(bytes[5]);
  const std::size_t ndim = bytes[6];
  if (ndim == 0 || ndim > kMaxDims) throw fail(K::bad_shape, "ndim " + std::to_string(ndim) + " outside 1..4");
  const std::size_t header = 7 + 4 * ndim;
  if (bytes.size() < header) throw fail(K::truncated, "header declares more dims than present");

  Shape shape(ndim);
  std::size_t n = 1;
  for (std::size_t i = 0; i < ndim; ++i) {
    shape[i] = get_le<std::uint32_t>(bytes.data() + 7 + 4 * i);
    if (shape[i] == 0) throw fail(K::bad_shape, "zero-sized dimension");
    n *= shape[i];
  }
  const std::size_t need = n * element_size(dtype);
  const std::size_t have = bytes.size() - header;
  if (have < need)
    throw fail(K::truncated, "payload is " + std::to_string(have) + " bytes, shape " + shape_str(shape) + " " +
                                 dtype_name(dtype) + " needs " + std::to_string(need));
  if (have > need) throw fail(K::trailing_bytes, std::to_string(have - need) + " unexpected trailing bytes");

  const std::uint8_t* p = bytes.data() + header;
  switch (dtype) {
    case DType::f32: {
      std::vector<float> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<float>(get_le<std::uint32_t>(p + 4 * i));
      return Grid(std::move(shape), std::move(v));
    }
    case DType::f64: {
      std::vector<double> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<double>(get_le<std::uint64_t>(p + 8 * i));
      return Grid(std::move(shape), std::move(v));
    }
    case DType::i8: {
      std::vector<std::int8_t> v(n);
      for (std::size_t i = 0; i < n; ++i) v[i] = std::bit_cast<std::int8_t>(p[i]);
      return Grid(std::move(shape), std::move(v));
    }
  }
  throw fail(K::unknown_dtype, "unreachable dtype");
}

void write_grid(const Grid& g, const std::filesystem::path& path) {
  const auto bytes = encode_grid(g);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw GridError(GridError::Kind::io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw GridError(GridError::Kind::io, "write failed: " + path.string());
}

namespace {
std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw GridError(GridError::Kind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}
}  // namespace

Grid read_grid(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  return decode_grid(bytes, path.string());
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t hash_file(const std::filesystem::path& path) { return fnv1a64(slurp(path)); }

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

}  // namespace sdrpn
