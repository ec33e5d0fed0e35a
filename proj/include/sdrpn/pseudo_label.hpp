// Pseudo-label construction from teacher attention: sink-token suppression by
// feature norm, then selective foreground/background/ignore assignment with a
// minimal foreground bounding box.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdrpn/field.hpp"
#include "sdrpn/grid.hpp"

namespace sdrpn {

struct Token {
  std::size_t r = 0;
  std::size_t c = 0;
  friend bool operator==(const Token&, const Token&) = default;
};

/// Inclusive token-coordinate rectangle.
struct TokenBox {
  std::size_t r0 = 0, c0 = 0, r1 = 0, c1 = 0;

  bool contains(std::size_t r, std::size_t c) const noexcept { return r >= r0 && r <= r1 && c >= c0 && c <= c1; }
  std::size_t height() const noexcept { return r1 - r0 + 1; }
  std::size_t width() const noexcept { return c1 - c0 + 1; }
  std::size_t area() const noexcept { return height() * width(); }
  friend bool operator==(const TokenBox&, const TokenBox&) = default;
};

std::string to_string(const TokenBox& b);

/// Smallest inclusive box containing every token; throws std::invalid_argument on an empty set.
TokenBox min_enclosing_box(std::span<const Token> tokens);

/// Box around the non-zero cells of a mask, or nullopt when the mask is empty.
std::optional<TokenBox> mask_bounding_box(const BinaryMask& mask);

struct NormThreshold {
  enum class Mode { absolute, auto_stat };
  Mode mode = Mode::auto_stat;
  double value = 0.0;  // used when mode == absolute
  double k = 3.0;      // auto: mean + k * std of the sample's token norms

  static NormThreshold absolute(double v) { return {Mode::absolute, v, 3.0}; }
  static NormThreshold automatic(double k = 3.0) { return {Mode::auto_stat, 0.0, k}; }
};

struct LabelThresholds {
  double tau_fg = 0.2;
  double tau_bg = 0.1;
  NormThreshold norm = NormThreshold::automatic();

  /// Throws std::invalid_argument unless 0 <= tau_bg < tau_fg <= 1.
  void validate() const;
};

/// Per-token labels: 1 foreground, 0 background, -1 ignored.
struct PseudoLabelMap {
  LabelField labels;
  std::optional<TokenBox> fg_box;
  bool degenerate = false;       // a_max == 0: every token ignored
  bool low_information = false;  // foreground covers the whole grid, no background left
};

/// Per-head, per-response-token attention rows over the H*W visual tokens.
struct AttentionTensor {
  std::size_t heads = 0;
  std::size_t responses = 0;
  std::size_t rows = 0;  // H
  std::size_t cols = 0;  // W
  std::vector<double> data;  // [heads][responses][H*W]

  std::span<const double> row(std::size_t head, std::size_t resp) const {
    return std::span<const double>(data).subspan((head * responses + resp) * rows * cols, rows * cols);
  }
};

/// Element-wise mean over heads and response tokens.
RealMap aggregate_attention(const AttentionTensor& a);

/// L2 norm of every token's feature vector; `features` is [H, W, d].
RealMap token_norms(const Grid& features);

struct SinkRemoval {
  RealMap map;
  double tau_norm = 0.0;
  std::vector<std::size_t> zeroed;  // flat token indices with norm > tau_norm
};

double resolve_norm_threshold(const RealMap& norms, const NormThreshold& policy);

SinkRemoval remove_sink_tokens(const RealMap& attention, const RealMap& norms, const NormThreshold& policy);
SinkRemoval remove_sink_tokens(const RealMap& attention, const Grid& features, const NormThreshold& policy);

PseudoLabelMap assign_labels(const RealMap& attention, const LabelThresholds& t);

/// Returns an empty string when the structural invariants hold, else a description of the first violation.
std::string check_label_invariants(const PseudoLabelMap& m);

}  // namespace sdrpn
