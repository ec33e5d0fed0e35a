#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "oracles.hpp"
#include "sdrpn/pseudo_label.hpp"
#include "sdrpn/rng.hpp"
#include "sdrpn/teacher.hpp"

using namespace sdrpn;

namespace {

RealMap random_map(RngStream& rng, std::size_t max_side = 16) {
  const std::size_t h = 2 + rng.below(max_side - 1), w = 2 + rng.below(max_side - 1);
  RealMap m(h, w);
  // Mixture of exact zeros, repeated values and continuous draws to exercise ties.
  for (auto& v : m.data) {
    const auto k = rng.below(10);
    v = k == 0 ? 0.0 : k == 1 ? 0.5 : rng.uniform();
  }
  return m;
}

LabelThresholds random_thresholds(RngStream& rng) {
  LabelThresholds t;
  const double a = rng.uniform(), b = rng.uniform();
  t.tau_fg = std::max(a, b);
  t.tau_bg = std::min(a, b);
  if (t.tau_bg == t.tau_fg) t.tau_bg = 0.0;
  return t;
}

}  // namespace

TEST_CASE("aggregate_attention examples") {
  AttentionTensor one{1, 1, 1, 3, {0.5, 0.25, 0.25}};
  CHECK(aggregate_attention(one).data == std::vector<double>{0.5, 0.25, 0.25});
  AttentionTensor two{2, 1, 1, 2, {1, 0, 0, 1}};
  CHECK(aggregate_attention(two).data == std::vector<double>{0.5, 0.5});
  AttentionTensor none{0, 1, 1, 2, {}};
  CHECK_THROWS_AS(aggregate_attention(none), std::invalid_argument);
}

TEST_CASE("remove_sink_tokens: direct application and identity case") {
  const RealMap m(2, 2, std::vector<double>{0.5, 0.1, 0.3, 0.1});
  const RealMap norms(2, 2, std::vector<double>{10, 2, 3, 2});
  const auto r = remove_sink_tokens(m, norms, NormThreshold::absolute(5.0));
  CHECK(r.map.data == std::vector<double>{0.0, 0.1, 0.3, 0.1});
  CHECK(r.zeroed == std::vector<std::size_t>{0});
  CHECK(r.tau_norm == 5.0);

  const auto id = remove_sink_tokens(m, norms, NormThreshold::absolute(std::numeric_limits<double>::infinity()));
  CHECK(id.map == m);
  CHECK(id.zeroed.empty());

  // Norm exactly at the threshold is kept (strict >).
  const auto edge = remove_sink_tokens(m, norms, NormThreshold::absolute(10.0));
  CHECK(edge.map == m);
}

TEST_CASE("auto tau_norm zeroes exactly the planted sinks at multiplier 8") {
  TeacherConfig cfg;
  for (std::uint64_t id = 0; id < 50; ++id) {
    const auto s = generate_sample(cfg, id);
    const auto r = remove_sink_tokens(s.roi_maps[0], s.feats.features, NormThreshold::automatic());
    CHECK(r.zeroed == s.feats.sinks);
  }
}

TEST_CASE("min_enclosing_box examples") {
  const std::vector<Token> one{{1, 1}};
  CHECK(min_enclosing_box(one) == TokenBox{1, 1, 1, 1});
  const std::vector<Token> two{{0, 2}, {3, 0}};
  CHECK(min_enclosing_box(two) == TokenBox{0, 0, 3, 2});
  const std::vector<Token> three{{1, 0}, {1, 1}, {2, 1}};
  CHECK(min_enclosing_box(three) == TokenBox{1, 0, 2, 1});
  CHECK_THROWS_AS(min_enclosing_box(std::vector<Token>{}), std::invalid_argument);
}

TEST_CASE("assign_labels worked example") {
  const RealMap m(3, 3, std::vector<double>{0.05, 0.15, 0.02, 0.25, 1.00, 0.05, 0.03, 0.30, 0.08});
  const auto p = assign_labels(m, LabelThresholds{});
  CHECK(p.labels.data == std::vector<std::int8_t>{0, -1, 0, 1, 1, 0, -1, 1, 0});
  REQUIRE(p.fg_box);
  CHECK(*p.fg_box == TokenBox{1, 0, 2, 1});
  CHECK_FALSE(p.degenerate);
  CHECK(oracle::brute_force_labels(m, 0.2, 0.1) == p.labels);
}

TEST_CASE("assign_labels degenerate and single-peak maps") {
  const auto zero = assign_labels(RealMap(3, 4, 0.0), LabelThresholds{});
  CHECK(zero.degenerate);
  CHECK_FALSE(zero.fg_box);
  for (auto v : zero.labels.data) CHECK(v == -1);
  CHECK(check_label_invariants(zero).empty());

  RealMap peak(4, 4, 0.0);
  peak(2, 1) = 1.0;
  const auto p = assign_labels(peak, LabelThresholds{});
  CHECK(*p.fg_box == TokenBox{2, 1, 2, 1});
  for (std::size_t i = 0; i < peak.size(); ++i) CHECK(p.labels[i] == (i == 2 * 4 + 1 ? 1 : 0));
}

TEST_CASE("full-grid foreground is flagged low-information") {
  const auto p = assign_labels(RealMap(3, 3, 0.7), LabelThresholds{});
  CHECK(p.low_information);
  for (auto v : p.labels.data) CHECK(v == 1);
}

TEST_CASE("threshold validation") {
  LabelThresholds t;
  CHECK_NOTHROW(t.validate());
  t.tau_fg = 0.1;
  t.tau_bg = 0.2;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.tau_fg = t.tau_bg = 0.2;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
  t.tau_fg = 1.5;
  t.tau_bg = 0.1;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("property: assign_labels matches the brute-force labeler and keeps its invariants") {
  RngStream rng(99, 0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto m = random_map(rng);
    const auto t = random_thresholds(rng);
    const auto p = assign_labels(m, t);
    REQUIRE(p.labels == oracle::brute_force_labels(m, t.tau_fg, t.tau_bg));
    REQUIRE(check_label_invariants(p).empty());
  }
}

TEST_CASE("property: labels are invariant to positive power-of-two scaling") {
  RngStream rng(5, 5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = random_map(rng);
    const auto t = random_thresholds(rng);
    auto scaled = m;
    const double c = std::ldexp(1.0, static_cast<int>(rng.below(40)) - 20);
    for (auto& v : scaled.data) v *= c;
    REQUIRE(assign_labels(scaled, t).labels == assign_labels(m, t).labels);
  }
}

TEST_CASE("property: labels are invariant to arbitrary positive scaling away from ties") {
  RngStream rng(6, 6);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    RealMap m(2 + rng.below(10), 2 + rng.below(10));
    for (auto& v : m.data) v = rng.uniform();
    const auto t = random_thresholds(rng);
    const double a_max = *std::max_element(m.data.begin(), m.data.end());
    bool near_tie = false;
    for (double v : m.data)
      near_tie = near_tie || std::abs(v - t.tau_fg * a_max) < 1e-9 || std::abs(v - t.tau_bg * a_max) < 1e-9;
    if (near_tie) continue;
    auto scaled = m;
    const double c = 0.01 + 100.0 * rng.uniform();
    for (auto& v : scaled.data) v *= c;
    REQUIRE(assign_labels(scaled, t).labels == assign_labels(m, t).labels);
    ++checked;
  }
  CHECK(checked > 250);
}

TEST_CASE("property: monotonicity in the thresholds") {
  RngStream rng(7, 7);
  auto count = [](const LabelField& l, std::int8_t v) { return std::count(l.data.begin(), l.data.end(), v); };
  for (int trial = 0; trial < 300; ++trial) {
    const auto m = random_map(rng);
    auto t = random_thresholds(rng);
    const auto base = assign_labels(m, t);

    auto higher_fg = t;
    higher_fg.tau_fg = t.tau_fg + (1.0 - t.tau_fg) * rng.uniform();
    const auto hf = assign_labels(m, higher_fg);
    REQUIRE(count(hf.labels, 1) <= count(base.labels, 1));
    for (std::size_t i = 0; i < m.size(); ++i)
      if (hf.labels[i] == 1) REQUIRE(base.labels[i] == 1);

    auto lower_bg = t;
    lower_bg.tau_bg = t.tau_bg * rng.uniform();
    const auto lb = assign_labels(m, lower_bg);
    for (std::size_t i = 0; i < m.size(); ++i)
      if (lb.labels[i] == 0) REQUIRE(base.labels[i] == 0);
  }
}
