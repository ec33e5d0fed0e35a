// Synthetic stand-in for a frozen multimodal teacher: planted target regions,
// visual token features with high-norm sink tokens, and noisy response-to-image
// attention aggregated over heads and response tokens.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "sdrpn/field.hpp"
#include "sdrpn/grid.hpp"
#include "sdrpn/manifest.hpp"
#include "sdrpn/pseudo_label.hpp"
#include "sdrpn/rng.hpp"

namespace sdrpn {

enum class NoiseModel { gaussian, gumbel };

NoiseModel parse_noise_model(const std::string& s);
const char* noise_model_name(NoiseModel m);

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TeacherConfig {
  std::uint32_t height = 16;
  std::uint32_t width = 16;
  std::uint32_t feature_dim = 16;
  std::uint32_t heads = 4;
  std::uint32_t responses = 8;
  std::uint32_t turns = 1;

  std::uint32_t sink_count = 1;
  double sink_multiplier = 8.0;  // sink norm = multiplier * sqrt(feature_dim)
  double sink_boost = 4.0;       // attention logit bonus on sink tokens

  double signal = 3.0;           // attention logit bonus on (kept) target tokens
  double drop_fraction = 0.3;    // share of target tokens with no attention signal
  double noise_scale = 0.7;      // background attention noise
  double noise_blur = 1.0;       // spatial correlation (token units) of the shared noise field
  NoiseModel noise = NoiseModel::gaussian;

  double feature_signal = 4.0;   // prototype strength carried by region token features
  std::uint32_t concepts = 4;    // prototype vocabulary size
  std::uint32_t distractors = 1; // non-queried regions carrying a different prototype

  double min_area_fraction = 0.04;
  double max_area_fraction = 0.25;
  double max_aspect = 3.0;

  std::uint64_t seed = 1;

  /// Throws ConfigError on any violated invariant.
  void validate() const;
  std::size_t tokens() const noexcept { return static_cast<std::size_t>(height) * width; }
};

/// Planted layout: the queried region plus optional distractor regions.
struct Scene {
  TokenBox target;
  BinaryMask target_mask;
  std::uint32_t concept_id = 0;
  std::vector<TokenBox> distractor_boxes;
  std::vector<std::uint32_t> distractor_concepts;
};

struct FeatureSet {
  Grid features;                   // [H, W, d] f32
  Grid queries;                    // [turns, d] f32
  std::vector<std::size_t> sinks;  // flat token indices, ascending
};

struct SyntheticSample {
  std::uint64_t id = 0;
  Scene scene;
  FeatureSet feats;
  std::vector<AttentionTensor> attention;  // one per conversation turn
  std::vector<RealMap> roi_maps;           // aggregated attention per turn
};

/// Unit-norm concept prototypes shared by every sample generated under `cfg.seed`.
std::vector<std::vector<double>> concept_prototypes(const TeacherConfig& cfg);

/// Uniformly chosen feasible rectangle (area and aspect limits from cfg).
TokenBox plant_box(const TeacherConfig& cfg, RngStream& rng);
BinaryMask plant_region(const TeacherConfig& cfg, RngStream& rng);

Scene plant_scene(const TeacherConfig& cfg, RngStream& rng);

FeatureSet make_features(const TeacherConfig& cfg, const Scene& scene, RngStream& rng);

/// Softmax of each row of `logits` ([heads][responses][H*W]) into an AttentionTensor.
AttentionTensor attention_from_logits(std::size_t heads, std::size_t responses, std::size_t rows, std::size_t cols,
                                      std::span<const double> logits);

struct AttentionDraw {
  std::vector<AttentionTensor> per_turn;
  std::vector<RealMap> roi_maps;
  std::vector<std::size_t> dropped;  // target tokens without signal
};

AttentionDraw make_attention(const TeacherConfig& cfg, const BinaryMask& target, std::span<const std::size_t> sinks,
                             RngStream& rng);

SyntheticSample generate_sample(const TeacherConfig& cfg, std::uint64_t sample_id);

/// Writes samples [first_id, first_id + n) under out_dir together with out_dir/<manifest_name>.
DatasetManifest generate_dataset(const TeacherConfig& cfg, std::size_t n, const std::filesystem::path& out_dir,
                                 std::uint64_t first_id = 0, const std::string& manifest_name = "manifest.json");

struct AmbiguityBin {
  double lo = 0.0, hi = 0.0;
  std::size_t tokens = 0;
  std::size_t inside = 0;  // tokens inside the ground-truth region
  double proportion() const { return tokens ? static_cast<double>(inside) / static_cast<double>(tokens) : 0.0; }
};

/// Histogram of relative attention a/a_max (after sink removal) against ground-truth membership.
std::vector<AmbiguityBin> ambiguity_histogram(const TeacherConfig& cfg, std::size_t samples, std::size_t bins,
                                              const NormThreshold& norm = NormThreshold::automatic());

}  // namespace sdrpn
