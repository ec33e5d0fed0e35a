#include "sdrpn/roi.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sdrpn {

GaussianKernel GaussianKernel::make(double sigma, std::optional<std::size_t> radius) {
  GaussianKernel k;
  k.sigma = sigma;
  if (!(sigma > 0.0)) {
    k.radius = 0;
    k.weights = {1.0};
    return k;
  }
  k.radius = radius.value_or(static_cast<std::size_t>(std::ceil(3.0 * sigma)));
  k.weights.resize(2 * k.radius + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < k.weights.size(); ++i) {
    const double x = static_cast<double>(i) - static_cast<double>(k.radius);
    k.weights[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += k.weights[i];
  }
  for (auto& w : k.weights) w /= total;
  return k;
}

std::size_t reflect_index(std::ptrdiff_t i, std::size_t n) {
  const auto period = static_cast<std::ptrdiff_t>(2 * n);
  std::ptrdiff_t m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<std::ptrdiff_t>(n) ? m : period - 1 - m);
}

RealMap gaussian_smooth(const RealMap& map, const GaussianKernel& k) {
  if (!k.enabled()) return map;
  const auto r = static_cast<std::ptrdiff_t>(k.radius);
  RealMap tmp(map.rows, map.cols, 0.0);
  for (std::size_t y = 0; y < map.rows; ++y)
    for (std::size_t x = 0; x < map.cols; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t)
        s += k.weights[static_cast<std::size_t>(t + r)] *
             map(y, reflect_index(static_cast<std::ptrdiff_t>(x) + t, map.cols));
      tmp(y, x) = s;
    }
  RealMap out(map.rows, map.cols, 0.0);
  for (std::size_t y = 0; y < map.rows; ++y)
    for (std::size_t x = 0; x < map.cols; ++x) {
      double s = 0.0;
      for (std::ptrdiff_t t = -r; t <= r; ++t)
        s += k.weights[static_cast<std::size_t>(t + r)] *
             tmp(reflect_index(static_cast<std::ptrdiff_t>(y) + t, map.rows), x);
      out(y, x) = s;
    }
  return out;
}

RealMap sigmoid_map(const RealMap& logits) {
  RealMap out = logits;
  for (auto& v : out.data) v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  return out;
}

BinaryMask binarize(const RealMap& map, double tau) {
  BinaryMask m(map.rows, map.cols, 0);
  for (std::size_t i = 0; i < map.size(); ++i) m[i] = map[i] > tau ? 1 : 0;
  return m;
}

std::vector<Region> connected_components(const BinaryMask& mask) {
  std::vector<Region> regions;
  std::vector<std::uint8_t> seen(mask.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < mask.size(); ++start) {
    if (!mask[start] || seen[start]) continue;
    std::vector<std::size_t> members;
    seen[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const std::size_t j = stack.back();
      stack.pop_back();
      members.push_back(j);
      const std::size_t r = j / mask.cols, c = j % mask.cols;
      auto visit = [&](std::size_t n) {
        if (mask[n] && !seen[n]) {
          seen[n] = 1;
          stack.push_back(n);
        }
      };
      if (r > 0) visit(j - mask.cols);
      if (r + 1 < mask.rows) visit(j + mask.cols);
      if (c > 0) visit(j - 1);
      if (c + 1 < mask.cols) visit(j + 1);
    }
    std::sort(members.begin(), members.end());
    Region reg;
    reg.tokens.reserve(members.size());
    for (auto j : members) reg.tokens.push_back({j / mask.cols, j % mask.cols});
    reg.box = min_enclosing_box(reg.tokens);
    regions.push_back(std::move(reg));
  }
  return regions;
}

UpscaleMode parse_upscale_mode(const std::string& s) {
  if (s == "box") return UpscaleMode::box;
  if (s == "mask") return UpscaleMode::mask;
  throw std::invalid_argument("unknown upscale mode '" + s + "' (expected box or mask)");
}

const char* upscale_mode_name(UpscaleMode m) { return m == UpscaleMode::box ? "box" : "mask"; }

BinaryMask RoIResult::selection() const {
  BinaryMask sel(rows, cols, 0);
  if (empty) return sel;
  if (mode == UpscaleMode::box) {
    for (const auto& b : boxes)
      for (std::size_t r = b.r0; r <= b.r1; ++r)
        for (std::size_t c = b.c0; c <= b.c1; ++c) sel(r, c) = 1;
  } else if (b_all) {
    for (std::size_t r = 0; r < cropped.rows; ++r)
      for (std::size_t c = 0; c < cropped.cols; ++c) sel(b_all->r0 + r, b_all->c0 + c) = cropped(r, c);
  }
  return sel;
}

RoIResult box_upscale(const std::vector<Region>& regions, std::size_t rows, std::size_t cols) {
  RoIResult res;
  res.mode = UpscaleMode::box;
  res.rows = rows;
  res.cols = cols;
  res.empty = regions.empty();
  for (const auto& r : regions) res.boxes.push_back(r.box);
  return res;
}

RoIResult masked_upscale(const std::vector<Region>& regions, const BinaryMask& mask) {
  RoIResult res;
  res.mode = UpscaleMode::mask;
  res.rows = mask.rows;
  res.cols = mask.cols;
  res.empty = regions.empty();
  if (res.empty) return res;
  TokenBox all = regions.front().box;
  for (const auto& r : regions) {
    all.r0 = std::min(all.r0, r.box.r0);
    all.c0 = std::min(all.c0, r.box.c0);
    all.r1 = std::max(all.r1, r.box.r1);
    all.c1 = std::max(all.c1, r.box.c1);
  }
  res.b_all = all;
  res.cropped = BinaryMask(all.height(), all.width(), 0);
  for (std::size_t r = 0; r < all.height(); ++r)
    for (std::size_t c = 0; c < all.width(); ++c) res.cropped(r, c) = mask(all.r0 + r, all.c0 + c);
  return res;
}

PixelBox token_box_to_pixel_box(const TokenBox& b, std::size_t patch, std::size_t image_h, std::size_t image_w) {
  if (patch < 1) throw std::invalid_argument("patch size must be >= 1");
  if (image_h == 0 || image_w == 0) throw std::invalid_argument("image dimensions must be positive");
  auto clamp = [](std::size_t v, std::size_t hi) { return std::min(v, hi - 1); };
  return {clamp(b.r0 * patch, image_h), clamp(b.c0 * patch, image_w), clamp((b.r1 + 1) * patch - 1, image_h),
          clamp((b.c1 + 1) * patch - 1, image_w)};
}

double iou(const TokenBox& a, const TokenBox& b) {
  const std::size_t r0 = std::max(a.r0, b.r0), c0 = std::max(a.c0, b.c0);
  const std::size_t r1 = std::min(a.r1, b.r1), c1 = std::min(a.c1, b.c1);
  const std::size_t inter = (r0 <= r1 && c0 <= c1) ? (r1 - r0 + 1) * (c1 - c0 + 1) : 0;
  const std::size_t uni = a.area() + b.area() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows != b.rows || a.cols != b.cols) throw std::invalid_argument("iou: masks differ in shape");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    inter += (a[i] && b[i]) ? 1 : 0;
    uni += (a[i] || b[i]) ? 1 : 0;
  }
  if (uni == 0) return 1.0;  // both empty
  return static_cast<double>(inter) / static_cast<double>(uni);
}

ScoreSpace parse_score_space(const std::string& s) {
  if (s == "sigmoid") return ScoreSpace::sigmoid;
  if (s == "relative") return ScoreSpace::relative;
  if (s == "sigmoid-relative" || s == "sigmoid_relative") return ScoreSpace::sigmoid_relative;
  throw std::invalid_argument("unknown score space '" + s + "' (expected sigmoid, relative or sigmoid-relative)");
}

const char* score_space_name(ScoreSpace s) {
  switch (s) {
    case ScoreSpace::sigmoid: return "sigmoid";
    case ScoreSpace::relative: return "relative";
    case ScoreSpace::sigmoid_relative: return "sigmoid-relative";
  }
  return "?";
}

RealMap to_score_space(const RealMap& raw, ScoreSpace space) {
  if (space == ScoreSpace::sigmoid) return sigmoid_map(raw);
  if (space == ScoreSpace::sigmoid_relative) return to_score_space(sigmoid_map(raw), ScoreSpace::relative);
  RealMap out = raw;
  const double mx = raw.size() ? *std::max_element(raw.data.begin(), raw.data.end()) : 0.0;
  for (auto& v : out.data) v = mx > 0.0 ? std::max(v, 0.0) / mx : 0.0;
  return out;
}

PostprocessOutput postprocess(const RealMap& raw, const PostprocessOptions& opt) {
  PostprocessOutput out;
  const auto smoothed = gaussian_smooth(to_score_space(raw, opt.space), GaussianKernel::make(opt.sigma, opt.radius));
  out.mask = binarize(smoothed, opt.tau);
  out.regions = connected_components(out.mask);
  out.result = opt.mode == UpscaleMode::box ? box_upscale(out.regions, raw.rows, raw.cols)
                                            : masked_upscale(out.regions, out.mask);
  return out;
}

}  // namespace sdrpn
