#include "sdrpn/rng.hpp"

#include <cmath>
#include <numbers>

namespace sdrpn {

std::uint64_t RngStream::below(std::uint64_t n) noexcept {
  // Rejection sampling keeps the result exactly uniform.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  std::uint64_t v;
  do {
    v = next_u64();
  } while (v >= limit);
  return v % n;
}

double RngStream::normal() noexcept {
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double RngStream::gumbel() noexcept {
  const double u = 1.0 - uniform();
  return -std::log(-std::log(u) + 1e-300);
}

std::vector<double> rng_uniform(RngStream& s, std::size_t n) {
  std::vector<double> out(n);
  for (auto& v : out) v = s.uniform();
  return out;
}

}  // namespace sdrpn
