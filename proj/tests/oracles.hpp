// Independent reference implementations used only by the tests.
#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <vector>

#include <cmath>

#include "sdrpn/field.hpp"
#include "sdrpn/student.hpp"

namespace sdrpn::oracle {

/// Literal three-case labeler: each token is tested against the foreground
/// rule, then against "outside the foreground box and below the background
/// cut", without sharing any code with the library path.
inline LabelField brute_force_labels(const RealMap& m, double tau_fg, double tau_bg) {
  LabelField out(m.rows, m.cols, std::int8_t{-1});
  double a_max = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < m.size(); ++i) a_max = std::max(a_max, m.data[i]);
  if (!(a_max > 0.0)) return out;

  auto is_fg = [&](std::size_t r, std::size_t c) { return m(r, c) >= tau_fg * a_max; };
  std::size_t rmin = m.rows, rmax = 0, cmin = m.cols, cmax = 0;
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c)
      if (is_fg(r, c)) {
        if (r < rmin) rmin = r;
        if (r > rmax) rmax = r;
        if (c < cmin) cmin = c;
        if (c > cmax) cmax = c;
      }
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const bool in_box = r >= rmin && r <= rmax && c >= cmin && c <= cmax;
      if (is_fg(r, c))
        out(r, c) = 1;
      else if (!in_box && m(r, c) <= tau_bg * a_max)
        out(r, c) = 0;
      else
        out(r, c) = -1;
    }
  return out;
}

/// RoI head by explicit loops: per-row layer norm (eps 1e-5), per-head
/// projections and dot products, then the mean over heads.
inline Mat naive_roi_logits(const Mat& roi, const Mat& visual, const Mat& gain, const Mat& bias, const Mat& wq,
                            const Mat& wk, std::size_t heads) {
  const std::size_t d = static_cast<std::size_t>(roi.cols());
  auto norm_row = [&](const Mat& x, Eigen::Index r) {
    std::vector<double> out(d);
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x(r, static_cast<Eigen::Index>(j));
    mu /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double e = x(r, static_cast<Eigen::Index>(j)) - mu;
      var += e * e;
    }
    var /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j)
      out[j] = (x(r, static_cast<Eigen::Index>(j)) - mu) / std::sqrt(var + 1e-5) * gain(0, static_cast<Eigen::Index>(j)) +
               bias(0, static_cast<Eigen::Index>(j));
    return out;
  };
  auto project = [&](const std::vector<double>& v, const Mat& w) {
    std::vector<double> out(d, 0.0);
    for (std::size_t o = 0; o < d; ++o)
      for (std::size_t i = 0; i < d; ++i) out[o] += v[i] * w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(o));
    return out;
  };
  const std::size_t dh = d / heads;
  Mat out = Mat::Zero(roi.rows(), visual.rows());
  for (Eigen::Index a = 0; a < roi.rows(); ++a) {
    const auto q = project(norm_row(roi, a), wq);
    for (Eigen::Index b = 0; b < visual.rows(); ++b) {
      const auto k = project(norm_row(visual, b), wk);
      double acc = 0.0;
      for (std::size_t h = 0; h < heads; ++h) {
        double dot = 0.0;
        for (std::size_t j = h * dh; j < (h + 1) * dh; ++j) dot += q[j] * k[j];
        acc += dot;
      }
      out(a, b) = acc / static_cast<double>(heads);
    }
  }
  return out;
}

/// |a - b| / max(|a|, |b|, 1e-4). The floor sits above the ~1e-10 noise of a
/// central difference at h = 1e-5, so tiny gradients are judged in absolute terms.
inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-4});
  return std::abs(a - b) / scale;
}

}  // namespace sdrpn::oracle
