#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "sdrpn/teacher.hpp"
#include "test_util.hpp"

using namespace sdrpn;

namespace {

std::size_t area(const BinaryMask& m) {
  std::size_t a = 0;
  for (auto v : m.data) a += v;
  return a;
}

bool is_filled_rectangle(const BinaryMask& m) {
  const auto box = mask_bounding_box(m);
  return box && box->area() == area(m);
}

}  // namespace

TEST_CASE("plant_region yields one rectangle covering 4%-25% of a 16x16 grid") {
  TeacherConfig cfg;
  for (std::uint64_t s = 0; s < 200; ++s) {
    RngStream rng(5, s);
    const auto m = plant_region(cfg, rng);
    const auto a = area(m);
    CHECK(a >= 10);
    CHECK(a <= 64);
    CHECK(is_filled_rectangle(m));
  }
  RngStream a(5, 1), b(5, 1);
  CHECK(plant_region(cfg, a) == plant_region(cfg, b));
}

TEST_CASE("grids smaller than 4x4 are rejected") {
  TeacherConfig cfg;
  cfg.height = cfg.width = 2;
  RngStream rng(1, 0);
  CHECK_THROWS_AS(plant_region(cfg, rng), ConfigError);
  cfg.height = 4;
  cfg.width = 3;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("config validation") {
  TeacherConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  auto bad = cfg;
  bad.sink_count = 256;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.drop_fraction = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = cfg;
  bad.feature_dim = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("sink tokens: exact count, norm multiplier, separation") {
  TeacherConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.sink_count = 3;
  RngStream srng(3, 0);
  const auto scene = plant_scene(cfg, srng);
  RngStream frng(3, 1);
  const auto fs = make_features(cfg, scene, frng);
  CHECK(fs.sinks.size() == 3);
  const auto norms = token_norms(fs.features);
  double max_other = 0.0, min_sink = 1e300;
  for (std::size_t j = 0; j < norms.size(); ++j) {
    if (std::binary_search(fs.sinks.begin(), fs.sinks.end(), j)) {
      CHECK(norms[j] == doctest::Approx(8.0 * std::sqrt(16.0)).epsilon(1e-6));
      min_sink = std::min(min_sink, norms[j]);
    } else {
      max_other = std::max(max_other, norms[j]);
    }
  }
  CHECK(min_sink > max_other);
}

TEST_CASE("without sinks every token norm stays within 3x of the median (Monte Carlo)") {
  TeacherConfig cfg;
  cfg.sink_count = 0;
  for (std::uint64_t id = 0; id < 100; ++id) {
    const auto s = generate_sample(cfg, id);
    auto norms = token_norms(s.feats.features).data;
    auto sorted = norms;
    std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
    const double med = sorted[sorted.size() / 2];
    for (double v : norms) {
      REQUIRE(v < 3.0 * med);
      REQUIRE(v > med / 3.0);
    }
  }
}

TEST_CASE("sink count >= H*W is a config error") {
  TeacherConfig cfg;
  cfg.height = cfg.width = 4;
  cfg.sink_count = 16;
  CHECK_THROWS_AS(generate_sample(cfg, 0), ConfigError);
}

TEST_CASE("softmax aggregation oracle: two rows over three tokens") {
  const std::vector<double> logits{0, 0, 0, std::log(2.0), 0, 0};
  const auto a = attention_from_logits(1, 2, 1, 3, logits);
  CHECK(a.row(0, 0)[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(a.row(0, 1)[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a.row(0, 1)[1] == doctest::Approx(0.25).epsilon(1e-12));
  const auto m = aggregate_attention(a);
  // (1/3 + 1/2) / 2 = 5/12, (1/3 + 1/4) / 2 = 7/24
  CHECK(m[0] == doctest::Approx(5.0 / 12.0).epsilon(1e-12));
  CHECK(m[1] == doctest::Approx(7.0 / 24.0).epsilon(1e-12));
  CHECK(m[2] == doctest::Approx(7.0 / 24.0).epsilon(1e-12));
  CHECK(m[0] == doctest::Approx(0.41667).epsilon(1e-5));
}

TEST_CASE("no signal, no sinks, no noise gives a uniform map") {
  TeacherConfig cfg;
  cfg.signal = 0;
  cfg.sink_boost = 0;
  cfg.noise_scale = 0;
  const auto s = generate_sample(cfg, 4);
  for (double v : s.roi_maps[0].data) CHECK(v == doctest::Approx(1.0 / 256.0).epsilon(1e-12));
}

TEST_CASE("strong signal without sinks or drops puts >90% of the mass on the target") {
  TeacherConfig cfg;
  cfg.signal = 12.0;
  cfg.sink_count = 0;
  cfg.drop_fraction = 0.0;
  for (std::uint64_t id = 0; id < 20; ++id) {
    const auto s = generate_sample(cfg, id);
    double fg = 0.0;
    for (std::size_t j = 0; j < s.roi_maps[0].size(); ++j)
      if (s.scene.target_mask[j]) fg += s.roi_maps[0][j];
    CHECK(fg > 0.9);
  }
}

TEST_CASE("attention rows are probability distributions and the aggregate sums to one") {
  TeacherConfig cfg;
  cfg.turns = 2;
  cfg.noise = NoiseModel::gumbel;
  for (std::uint64_t id = 0; id < 10; ++id) {
    const auto s = generate_sample(cfg, id);
    REQUIRE(s.attention.size() == 2);
    for (const auto& a : s.attention)
      for (std::size_t h = 0; h < a.heads; ++h)
        for (std::size_t t = 0; t < a.responses; ++t) {
          double sum = 0.0;
          for (double v : a.row(h, t)) {
            REQUIRE(v >= 0.0);
            sum += v;
          }
          REQUIRE(std::abs(sum - 1.0) < 1e-6);
        }
    for (const auto& m : s.roi_maps) {
      double sum = 0.0;
      for (double v : m.data) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("drop fraction suppresses an exact share of target tokens") {
  TeacherConfig cfg;
  RngStream r(8, 0);
  const auto mask = plant_region(cfg, r);
  const std::vector<std::size_t> no_sinks;
  RngStream ar(8, 1);
  const auto draw = make_attention(cfg, mask, no_sinks, ar);
  CHECK(draw.dropped.size() == static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(area(mask)))));
  for (auto j : draw.dropped) CHECK(mask[j] == 1);
}

TEST_CASE("distractors never touch the target and carry a different concept") {
  TeacherConfig cfg;
  for (std::uint64_t s = 0; s < 50; ++s) {
    RngStream rng(1, s);
    const auto scene = plant_scene(cfg, rng);
    for (std::size_t i = 0; i < scene.distractor_boxes.size(); ++i) {
      const auto& b = scene.distractor_boxes[i];
      CHECK(scene.distractor_concepts[i] != scene.concept_id);
      for (std::size_t r = b.r0; r <= b.r1; ++r)
        for (std::size_t c = b.c0; c <= b.c1; ++c) CHECK(scene.target_mask(r, c) == 0);
    }
  }
}

TEST_CASE("generate_dataset: empty, deterministic, seed-sensitive") {
  test::TempDir d0, d1, d2, d3;
  TeacherConfig cfg;
  const auto empty = generate_dataset(cfg, 0, d0.path);
  CHECK(empty.samples.empty());
  CHECK(std::filesystem::exists(d0.path / "manifest.json"));

  const auto m1 = generate_dataset(cfg, 8, d1.path);
  const auto m2 = generate_dataset(cfg, 8, d2.path);
  REQUIRE(m1.samples.size() == 8);
  for (std::size_t i = 0; i < 8; ++i) {
    CHECK(hash_file(d1.path / m1.samples[i].attention) == hash_file(d2.path / m2.samples[i].attention));
    CHECK(hash_file(d1.path / m1.samples[i].features) == hash_file(d2.path / m2.samples[i].features));
    CHECK(hash_file(d1.path / m1.samples[i].gt_mask) == hash_file(d2.path / m2.samples[i].gt_mask));
  }
  CHECK(hash_file(d1.path / "manifest.json") == hash_file(d2.path / "manifest.json"));

  auto cfg2 = cfg;
  cfg2.seed = 2;
  const auto m3 = generate_dataset(cfg2, 8, d3.path);
  bool any_diff = false;
  for (std::size_t i = 0; i < 8; ++i)
    any_diff = any_diff || read_grid(d1.path / m1.samples[i].attention) != read_grid(d3.path / m3.samples[i].attention);
  CHECK(any_diff);
  CHECK_NOTHROW(validate_manifest(read_manifest(d1.path / "manifest.json"), true));
}

TEST_CASE("sample streams are independent of generation order") {
  TeacherConfig cfg;
  const auto late = generate_sample(cfg, 17);
  (void)generate_sample(cfg, 3);
  const auto again = generate_sample(cfg, 17);
  CHECK(late.feats.features == again.feats.features);
  CHECK(late.roi_maps == again.roi_maps);
}

TEST_CASE("ambiguity histogram: foreground proportion rises with relative attention") {
  TeacherConfig cfg;
  // 10k samples x 256 tokens.
  const auto hist = ambiguity_histogram(cfg, 10000, 10);
  // Near saturation adjacent bins can swap by sampling noise; allow 3 binomial standard errors.
  const AmbiguityBin* prev = nullptr;
  for (const auto& b : hist) {
    if (b.tokens == 0) continue;
    if (prev) {
      auto var = [](const AmbiguityBin& x) { return x.proportion() * (1.0 - x.proportion()) / double(x.tokens); };
      CHECK(b.proportion() >= prev->proportion() - 3.0 * std::sqrt(var(b) + var(*prev)));
    }
    prev = &b;
  }
  CHECK(hist.front().proportion() < hist.back().proportion());
}
