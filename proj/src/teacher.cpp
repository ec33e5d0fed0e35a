#include "sdrpn/teacher.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sdrpn/roi.hpp"

namespace sdrpn {

namespace {

// Stream tags for the per-sample sub-streams and the dataset-wide prototype stream.
constexpr std::uint64_t kPrototypeStream = 0xfeedface00000001ULL;
constexpr std::uint64_t kSceneTag = 1;
constexpr std::uint64_t kFeatureTag = 2;
constexpr std::uint64_t kAttentionTag = 3;

std::vector<std::size_t> choose_distinct(std::size_t n, std::size_t k, RngStream& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

bool overlaps_or_touches(const TokenBox& a, const TokenBox& b) {
  return !(a.r1 + 1 < b.r0 || b.r1 + 1 < a.r0 || a.c1 + 1 < b.c0 || b.c1 + 1 < a.c0);
}

}  // namespace

NoiseModel parse_noise_model(const std::string& s) {
  if (s == "gaussian") return NoiseModel::gaussian;
  if (s == "gumbel") return NoiseModel::gumbel;
  throw ConfigError("unknown noise model '" + s + "' (expected gaussian or gumbel)");
}

const char* noise_model_name(NoiseModel m) { return m == NoiseModel::gaussian ? "gaussian" : "gumbel"; }

void TeacherConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("teacher config: " + m); };
  if (height < 4 || width < 4) fail("grid must be at least 4x4");
  if (feature_dim < 2) fail("feature_dim must be >= 2");
  if (heads < 1) fail("heads must be >= 1");
  if (responses < 1) fail("responses must be >= 1");
  if (turns < 1) fail("turns must be >= 1");
  if (sink_count >= tokens()) fail("sink_count must be smaller than the token count");
  if (!(sink_multiplier > 0.0)) fail("sink_multiplier must be positive");
  if (!(drop_fraction >= 0.0 && drop_fraction < 1.0)) fail("drop_fraction must lie in [0, 1)");
  if (!(noise_scale >= 0.0)) fail("noise_scale must be non-negative");
  if (concepts < 1 || (distractors > 0 && concepts < 2)) fail("distractors need at least two concepts");
  if (!(min_area_fraction > 0.0 && min_area_fraction <= max_area_fraction && max_area_fraction <= 1.0))
    fail("area fractions must satisfy 0 < min <= max <= 1");
  if (!(max_aspect >= 1.0)) fail("max_aspect must be >= 1");
  const auto min_area = static_cast<std::size_t>(std::ceil(min_area_fraction * static_cast<double>(tokens())));
  const auto max_area = static_cast<std::size_t>(std::floor(max_area_fraction * static_cast<double>(tokens())));
  if (min_area > max_area) fail("no rectangle area satisfies the area fractions on this grid");
}

std::vector<std::vector<double>> concept_prototypes(const TeacherConfig& cfg) {
  RngStream rng(cfg.seed, kPrototypeStream);
  std::vector<std::vector<double>> protos(cfg.concepts, std::vector<double>(cfg.feature_dim));
  for (auto& p : protos) {
    double n2 = 0.0;
    for (auto& v : p) {
      v = rng.normal();
      n2 += v * v;
    }
    for (auto& v : p) v /= std::sqrt(n2);
  }
  return protos;
}

TokenBox plant_box(const TeacherConfig& cfg, RngStream& rng) {
  cfg.validate();
  const auto total = static_cast<double>(cfg.tokens());
  const auto min_area = static_cast<std::size_t>(std::ceil(cfg.min_area_fraction * total));
  const auto max_area = static_cast<std::size_t>(std::floor(cfg.max_area_fraction * total));
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::size_t h = 1; h <= cfg.height; ++h)
    for (std::size_t w = 1; w <= cfg.width; ++w) {
      const std::size_t a = h * w;
      const double aspect = static_cast<double>(std::max(h, w)) / static_cast<double>(std::min(h, w));
      if (a >= min_area && a <= max_area && aspect <= cfg.max_aspect) shapes.emplace_back(h, w);
    }
  if (shapes.empty()) throw ConfigError("teacher config: no feasible region shape on this grid");
  const auto [h, w] = shapes[rng.below(shapes.size())];
  const std::size_t r0 = rng.below(cfg.height - h + 1);
  const std::size_t c0 = rng.below(cfg.width - w + 1);
  return {r0, c0, r0 + h - 1, c0 + w - 1};
}

BinaryMask plant_region(const TeacherConfig& cfg, RngStream& rng) {
  const TokenBox b = plant_box(cfg, rng);
  BinaryMask m(cfg.height, cfg.width, 0);
  for (std::size_t r = b.r0; r <= b.r1; ++r)
    for (std::size_t c = b.c0; c <= b.c1; ++c) m(r, c) = 1;
  return m;
}

Scene plant_scene(const TeacherConfig& cfg, RngStream& rng) {
  Scene s;
  s.target = plant_box(cfg, rng);
  s.target_mask = BinaryMask(cfg.height, cfg.width, 0);
  for (std::size_t r = s.target.r0; r <= s.target.r1; ++r)
    for (std::size_t c = s.target.c0; c <= s.target.c1; ++c) s.target_mask(r, c) = 1;
  s.concept_id = static_cast<std::uint32_t>(rng.below(cfg.concepts));
  constexpr int kAttempts = 32;
  for (std::uint32_t d = 0; d < cfg.distractors; ++d) {
    for (int attempt = 0; attempt < kAttempts; ++attempt) {
      const TokenBox b = plant_box(cfg, rng);
      bool clash = overlaps_or_touches(b, s.target);
      for (const auto& o : s.distractor_boxes) clash = clash || overlaps_or_touches(b, o);
      if (clash) continue;
      auto other = static_cast<std::uint32_t>(rng.below(cfg.concepts - 1));
      if (other >= s.concept_id) ++other;
      s.distractor_boxes.push_back(b);
      s.distractor_concepts.push_back(other);
      break;
    }
  }
  return s;
}

FeatureSet make_features(const TeacherConfig& cfg, const Scene& scene, RngStream& rng) {
  cfg.validate();
  if (scene.target_mask.rows != cfg.height || scene.target_mask.cols != cfg.width)
    throw ConfigError("make_features: mask shape does not match config");
  const std::size_t n = cfg.tokens(), d = cfg.feature_dim;
  const auto protos = concept_prototypes(cfg);

  std::vector<double> f(n * d);
  for (auto& v : f) v = rng.normal();
  auto add_proto = [&](std::size_t j, std::uint32_t concept_id) {
    for (std::size_t k = 0; k < d; ++k) f[j * d + k] += cfg.feature_signal * protos[concept_id][k];
  };
  for (std::size_t j = 0; j < n; ++j)
    if (scene.target_mask[j]) add_proto(j, scene.concept_id);
  for (std::size_t i = 0; i < scene.distractor_boxes.size(); ++i) {
    const auto& b = scene.distractor_boxes[i];
    for (std::size_t r = b.r0; r <= b.r1; ++r)
      for (std::size_t c = b.c0; c <= b.c1; ++c) add_proto(r * cfg.width + c, scene.distractor_concepts[i]);
  }

  FeatureSet out;
  out.sinks = choose_distinct(n, cfg.sink_count, rng);
  const double sink_norm = cfg.sink_multiplier * std::sqrt(static_cast<double>(d));
  for (auto j : out.sinks) {
    double n2 = 0.0;
    for (std::size_t k = 0; k < d; ++k) n2 += f[j * d + k] * f[j * d + k];
    const double scale = sink_norm / std::sqrt(n2);
    for (std::size_t k = 0; k < d; ++k) f[j * d + k] *= scale;
  }

  std::vector<float> ff(f.begin(), f.end());
  out.features = Grid(Shape{cfg.height, cfg.width, cfg.feature_dim}, std::move(ff));

  std::vector<float> q;
  q.reserve(cfg.turns * d);
  const double qscale = std::sqrt(static_cast<double>(d));
  for (std::uint32_t t = 0; t < cfg.turns; ++t)
    for (std::size_t k = 0; k < d; ++k) q.push_back(static_cast<float>(qscale * protos[scene.concept_id][k]));
  out.queries = Grid(Shape{cfg.turns, cfg.feature_dim}, std::move(q));
  return out;
}

AttentionTensor attention_from_logits(std::size_t heads, std::size_t responses, std::size_t rows, std::size_t cols,
                                      std::span<const double> logits) {
  const std::size_t n = rows * cols;
  if (logits.size() != heads * responses * n) throw std::invalid_argument("attention_from_logits: size mismatch");
  AttentionTensor a{heads, responses, rows, cols, std::vector<double>(logits.begin(), logits.end())};
  for (std::size_t row = 0; row < heads * responses; ++row) {
    double* p = a.data.data() + row * n;
    const double mx = *std::max_element(p, p + n);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += (p[j] = std::exp(p[j] - mx));
    for (std::size_t j = 0; j < n; ++j) p[j] /= s;
  }
  return a;
}

AttentionDraw make_attention(const TeacherConfig& cfg, const BinaryMask& target, std::span<const std::size_t> sinks,
                             RngStream& rng) {
  const std::size_t n = cfg.tokens();
  AttentionDraw out;

  // Incomplete activation: an exact share of target tokens carries no signal.
  std::vector<std::size_t> fg;
  for (std::size_t j = 0; j < n; ++j)
    if (target[j]) fg.push_back(j);
  const auto n_drop = static_cast<std::size_t>(std::floor(cfg.drop_fraction * static_cast<double>(fg.size())));
  std::vector<double> base(n, 0.0);
  for (auto j : fg) base[j] = cfg.signal;
  for (auto k : choose_distinct(fg.size(), n_drop, rng)) {
    base[fg[k]] = 0.0;
    out.dropped.push_back(fg[k]);
  }
  for (auto j : sinks) base[j] += cfg.sink_boost;

  // Spatially correlated background field shared by all rows of a turn, plus
  // independent per-row noise at half the scale.
  for (std::uint32_t turn = 0; turn < cfg.turns; ++turn) {
    RealMap field(cfg.height, cfg.width);
    for (auto& v : field.data) v = rng.normal();
    if (cfg.noise_blur > 0.0) {
      field = gaussian_smooth(field, GaussianKernel::make(cfg.noise_blur));
      double m = 0.0, s2 = 0.0;
      for (double v : field.data) m += v;
      m /= static_cast<double>(n);
      for (double v : field.data) s2 += (v - m) * (v - m);
      const double sd = std::sqrt(s2 / static_cast<double>(n));
      for (auto& v : field.data) v = sd > 0 ? (v - m) / sd : 0.0;
    }
    std::vector<double> logits(static_cast<std::size_t>(cfg.heads) * cfg.responses * n);
    for (std::size_t row = 0; row < static_cast<std::size_t>(cfg.heads) * cfg.responses; ++row)
      for (std::size_t j = 0; j < n; ++j) {
        const double eps = cfg.noise == NoiseModel::gaussian ? rng.normal() : rng.gumbel() - 0.5772156649015329;
        logits[row * n + j] = base[j] + cfg.noise_scale * (field[j] + 0.5 * eps);
      }
    out.per_turn.push_back(attention_from_logits(cfg.heads, cfg.responses, cfg.height, cfg.width, logits));
    out.roi_maps.push_back(aggregate_attention(out.per_turn.back()));
  }
  return out;
}

SyntheticSample generate_sample(const TeacherConfig& cfg, std::uint64_t sample_id) {
  cfg.validate();
  const RngStream root(cfg.seed, sample_id);
  RngStream scene_rng = root.derive(kSceneTag);
  RngStream feat_rng = root.derive(kFeatureTag);
  RngStream attn_rng = root.derive(kAttentionTag);

  SyntheticSample s;
  s.id = sample_id;
  s.scene = plant_scene(cfg, scene_rng);
  s.feats = make_features(cfg, s.scene, feat_rng);
  auto draw = make_attention(cfg, s.scene.target_mask, s.feats.sinks, attn_rng);
  s.attention = std::move(draw.per_turn);
  s.roi_maps = std::move(draw.roi_maps);
  return s;
}

DatasetManifest generate_dataset(const TeacherConfig& cfg, std::size_t n, const std::filesystem::path& out_dir,
                                 std::uint64_t first_id, const std::string& manifest_name) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  DatasetManifest m;
  m.height = cfg.height;
  m.width = cfg.width;
  m.feature_dim = cfg.feature_dim;
  m.seed = cfg.seed;
  m.root = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t id = first_id + i;
    const auto s = generate_sample(cfg, id);
    std::ostringstream stem;
    stem << "sample_" << id;
    SampleRecord rec;
    rec.id = id;
    rec.turns = cfg.turns;
    rec.attention = stem.str() + "_attention.grid";
    rec.features = stem.str() + "_features.grid";
    rec.queries = stem.str() + "_queries.grid";
    rec.gt_mask = stem.str() + "_gt.grid";
    write_grid(stack_to_grid(s.roi_maps), out_dir / rec.attention);
    write_grid(s.feats.features, out_dir / rec.features);
    write_grid(s.feats.queries, out_dir / rec.queries);
    write_grid(to_grid(s.scene.target_mask), out_dir / rec.gt_mask);
    m.samples.push_back(std::move(rec));
  }
  write_manifest(m, out_dir / manifest_name);
  return m;
}

std::vector<AmbiguityBin> ambiguity_histogram(const TeacherConfig& cfg, std::size_t samples, std::size_t bins,
                                              const NormThreshold& norm) {
  if (bins == 0) throw std::invalid_argument("ambiguity_histogram: bins must be positive");
  std::vector<AmbiguityBin> hist(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    hist[b].lo = static_cast<double>(b) / static_cast<double>(bins);
    hist[b].hi = static_cast<double>(b + 1) / static_cast<double>(bins);
  }
  for (std::size_t i = 0; i < samples; ++i) {
    const auto s = generate_sample(cfg, i);
    for (const auto& roi : s.roi_maps) {
      const auto clean = remove_sink_tokens(roi, s.feats.features, norm);
      const double a_max = *std::max_element(clean.map.data.begin(), clean.map.data.end());
      if (!(a_max > 0.0)) continue;
      for (std::size_t j = 0; j < clean.map.size(); ++j) {
        if (std::binary_search(clean.zeroed.begin(), clean.zeroed.end(), j)) continue;
        const double rel = clean.map[j] / a_max;
        const auto b = std::min(bins - 1, static_cast<std::size_t>(rel * static_cast<double>(bins)));
        ++hist[b].tokens;
        if (s.scene.target_mask[j]) ++hist[b].inside;
      }
    }
  }
  return hist;
}

}  // namespace sdrpn
