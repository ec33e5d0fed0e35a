#include "sdrpn/pseudo_label.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace sdrpn {

std::string to_string(const TokenBox& b) {
  std::ostringstream os;
  os << '(' << b.r0 << ',' << b.c0 << ',' << b.r1 << ',' << b.c1 << ')';
  return os.str();
}

TokenBox min_enclosing_box(std::span<const Token> tokens) {
  if (tokens.empty()) throw std::invalid_argument("min_enclosing_box: empty token set");
  TokenBox b{tokens[0].r, tokens[0].c, tokens[0].r, tokens[0].c};
  for (const auto& t : tokens.subspan(1)) {
    b.r0 = std::min(b.r0, t.r);
    b.c0 = std::min(b.c0, t.c);
    b.r1 = std::max(b.r1, t.r);
    b.c1 = std::max(b.c1, t.c);
  }
  return b;
}

std::optional<TokenBox> mask_bounding_box(const BinaryMask& mask) {
  std::vector<Token> on;
  for (std::size_t r = 0; r < mask.rows; ++r)
    for (std::size_t c = 0; c < mask.cols; ++c)
      if (mask(r, c)) on.push_back({r, c});
  if (on.empty()) return std::nullopt;
  return min_enclosing_box(on);
}

void LabelThresholds::validate() const {
  if (!(tau_bg >= 0.0 && tau_bg < tau_fg && tau_fg <= 1.0)) {
    std::ostringstream os;
    os << "thresholds must satisfy 0 <= tau_bg < tau_fg <= 1 (got tau_fg=" << tau_fg << ", tau_bg=" << tau_bg << ')';
    throw std::invalid_argument(os.str());
  }
  if (norm.mode == NormThreshold::Mode::absolute && std::isnan(norm.value))
    throw std::invalid_argument("absolute tau_norm must not be NaN");
}

RealMap aggregate_attention(const AttentionTensor& a) {
  if (a.heads == 0 || a.responses == 0) throw std::invalid_argument("aggregate_attention: empty head or response axis");
  const std::size_t n = a.rows * a.cols;
  if (a.data.size() != a.heads * a.responses * n) throw std::invalid_argument("aggregate_attention: tensor size mismatch");
  RealMap out(a.rows, a.cols, 0.0);
  for (std::size_t h = 0; h < a.heads; ++h)
    for (std::size_t t = 0; t < a.responses; ++t) {
      const auto row = a.row(h, t);
      for (std::size_t j = 0; j < n; ++j) out[j] += row[j];
    }
  const double inv = 1.0 / static_cast<double>(a.heads * a.responses);
  for (auto& v : out.data) v *= inv;
  return out;
}

RealMap token_norms(const Grid& features) {
  if (features.ndim() != 3) throw std::invalid_argument("features must be [H, W, d]");
  const std::size_t h = features.dim(0), w = features.dim(1), d = features.dim(2);
  const auto f = features.to_f64();
  RealMap out(h, w);
  for (std::size_t j = 0; j < h * w; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += f[j * d + k] * f[j * d + k];
    out[j] = std::sqrt(s);
  }
  return out;
}

double resolve_norm_threshold(const RealMap& norms, const NormThreshold& policy) {
  if (policy.mode == NormThreshold::Mode::absolute) return policy.value;
  const double n = static_cast<double>(norms.size());
  double mean = 0.0;
  for (double v : norms.data) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : norms.data) var += (v - mean) * (v - mean);
  return mean + policy.k * std::sqrt(var / n);
}

SinkRemoval remove_sink_tokens(const RealMap& attention, const RealMap& norms, const NormThreshold& policy) {
  if (attention.rows != norms.rows || attention.cols != norms.cols)
    throw std::invalid_argument("remove_sink_tokens: attention and feature grids differ in shape");
  SinkRemoval out{attention, resolve_norm_threshold(norms, policy), {}};
  for (std::size_t j = 0; j < norms.size(); ++j)
    if (norms[j] > out.tau_norm) {
      out.map[j] = 0.0;
      out.zeroed.push_back(j);
    }
  return out;
}

SinkRemoval remove_sink_tokens(const RealMap& attention, const Grid& features, const NormThreshold& policy) {
  return remove_sink_tokens(attention, token_norms(features), policy);
}

PseudoLabelMap assign_labels(const RealMap& attention, const LabelThresholds& t) {
  PseudoLabelMap out;
  out.labels = LabelField(attention.rows, attention.cols, std::int8_t{-1});
  if (attention.size() == 0) {
    out.degenerate = true;
    return out;
  }
  const double a_max = *std::max_element(attention.data.begin(), attention.data.end());
  if (!(a_max > 0.0)) {
    out.degenerate = true;
    return out;
  }

  const double fg_cut = t.tau_fg * a_max;
  const double bg_cut = t.tau_bg * a_max;
  std::vector<Token> fg;
  for (std::size_t r = 0; r < attention.rows; ++r)
    for (std::size_t c = 0; c < attention.cols; ++c)
      if (attention(r, c) >= fg_cut) fg.push_back({r, c});

  const TokenBox box = min_enclosing_box(fg);
  out.fg_box = box;
  for (const auto& tok : fg) out.labels(tok.r, tok.c) = 1;
  for (std::size_t r = 0; r < attention.rows; ++r)
    for (std::size_t c = 0; c < attention.cols; ++c)
      if (!box.contains(r, c) && attention(r, c) <= bg_cut) out.labels(r, c) = 0;
  out.low_information = fg.size() == attention.size();
  return out;
}

std::string check_label_invariants(const PseudoLabelMap& m) {
  const auto& L = m.labels;
  bool any_fg = false;
  for (std::size_t r = 0; r < L.rows; ++r)
    for (std::size_t c = 0; c < L.cols; ++c) {
      const auto v = L(r, c);
      if (v != -1 && v != 0 && v != 1) return "label value outside {-1,0,1}";
      if (v == 1) {
        any_fg = true;
        if (!m.fg_box || !m.fg_box->contains(r, c)) return "foreground token outside B_fg";
      }
      if (v == 0 && m.fg_box && m.fg_box->contains(r, c)) return "background token inside B_fg";
    }
  if (m.degenerate) {
    for (auto v : L.data)
      if (v != -1) return "degenerate map with a non-ignored token";
    return {};
  }
  if (!any_fg) return "no foreground token in a non-degenerate map";
  return {};
}

}  // namespace sdrpn
