// RoI post-processing geometry: Gaussian smoothing, binarization, 4-connected
// components, per-region boxes (box mode) or one union box plus mask (mask mode),
// and IoU scoring.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "sdrpn/field.hpp"
#include "sdrpn/pseudo_label.hpp"

namespace sdrpn {

struct GaussianKernel {
  double sigma = 1.0;
  std::size_t radius = 3;
  std::vector<double> weights;  // 2 * radius + 1 taps, normalized, symmetric

  /// Sampled exp(-x^2 / 2 sigma^2) on [-radius, radius], normalized to sum 1. radius defaults to ceil(3 sigma).
  static GaussianKernel make(double sigma, std::optional<std::size_t> radius = std::nullopt);
  bool enabled() const noexcept { return sigma > 0.0; }
};

/// Half-sample symmetric reflection of index i into [0, n).
std::size_t reflect_index(std::ptrdiff_t i, std::size_t n);

/// Separable 2-D convolution with reflect padding; identity when the kernel is disabled.
RealMap gaussian_smooth(const RealMap& map, const GaussianKernel& k);

RealMap sigmoid_map(const RealMap& logits);

/// 1 where value > tau (strict), else 0.
BinaryMask binarize(const RealMap& map, double tau);

struct Region {
  std::vector<Token> tokens;  // row-major order
  TokenBox box;
};

/// 4-connected components of the 1-cells, ordered by their first token in row-major order.
std::vector<Region> connected_components(const BinaryMask& mask);

enum class UpscaleMode { box, mask };

UpscaleMode parse_upscale_mode(const std::string& s);
const char* upscale_mode_name(UpscaleMode m);

struct RoIResult {
  UpscaleMode mode = UpscaleMode::mask;
  std::size_t rows = 0, cols = 0;
  std::vector<TokenBox> boxes;     // box mode: one per region
  std::optional<TokenBox> b_all;   // mask mode: union box
  BinaryMask cropped;              // mask mode: mask restricted to b_all
  bool empty = false;

  /// Token-level selection the result stands for: union of boxes, or the mask inside b_all.
  BinaryMask selection() const;
};

RoIResult box_upscale(const std::vector<Region>& regions, std::size_t rows, std::size_t cols);
RoIResult masked_upscale(const std::vector<Region>& regions, const BinaryMask& mask);

struct PixelBox {
  std::size_t y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // inclusive
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// Token box to inclusive pixel rectangle, clamped to an image of image_h x image_w pixels.
PixelBox token_box_to_pixel_box(const TokenBox& b, std::size_t patch, std::size_t image_h, std::size_t image_w);

double iou(const TokenBox& a, const TokenBox& b);
double iou(const BinaryMask& a, const BinaryMask& b);

enum class ScoreSpace {
  sigmoid,   // logits -> sigmoid probabilities
  relative,  // non-negative scores divided by their maximum
  sigmoid_relative,  // sigmoid probabilities divided by their maximum
};

ScoreSpace parse_score_space(const std::string& s);
const char* score_space_name(ScoreSpace s);

struct PostprocessOptions {
  ScoreSpace space = ScoreSpace::sigmoid;
  double sigma = 1.0;
  std::optional<std::size_t> radius;
  double tau = 0.5;
  UpscaleMode mode = UpscaleMode::mask;
};

RealMap to_score_space(const RealMap& raw, ScoreSpace space);

struct PostprocessOutput {
  BinaryMask mask;
  std::vector<Region> regions;
  RoIResult result;
};

/// score space -> smooth -> binarize -> components -> upscale.
PostprocessOutput postprocess(const RealMap& raw, const PostprocessOptions& opt);

}  // namespace sdrpn
