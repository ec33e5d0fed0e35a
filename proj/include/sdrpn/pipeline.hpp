// Stage functions behind the command-line tool: pseudo-labelling, prediction,
// post-processing, evaluation, run summaries and the multi-seed ablation bench.
// Every stage reads and writes files so runs can be audited and re-hashed.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sdrpn/manifest.hpp"
#include "sdrpn/roi.hpp"
#include "sdrpn/student.hpp"
#include "sdrpn/targets.hpp"
#include "sdrpn/teacher.hpp"
#include "sdrpn/train.hpp"

namespace sdrpn {

namespace fs = std::filesystem;

// ---- pseudo-label ----------------------------------------------------------

struct PseudoLabelStats {
  std::size_t samples = 0;
  std::size_t degenerate_samples = 0;  // every turn degenerate
  std::size_t degenerate_turns = 0;
  std::size_t low_information_turns = 0;
  std::size_t sink_tokens_removed = 0;
  std::size_t fg_tokens = 0;
  std::size_t fg_inside_gt = 0;  // foreground labels that fall inside the planted region
  double fg_precision() const { return fg_tokens ? static_cast<double>(fg_inside_gt) / static_cast<double>(fg_tokens) : 0.0; }
};

/// Writes out_dir/targets/*.grid, a re-rooted out_dir/manifest.json that points at them, and
/// out_dir/pseudo_label.json with the stats.
PseudoLabelStats run_pseudo_label(const DatasetManifest& in, const TargetOptions& opt, const fs::path& out_dir);

// ---- predictions -------------------------------------------------------------

struct PredictionIndex {
  std::string source;  // "student" (logits) or "attention" (teacher maps)
  std::uint32_t height = 0, width = 0, turns = 1;
  std::vector<std::pair<std::uint64_t, std::string>> samples;  // id -> [turns, H, W] f64 grid, relative to root
  fs::path root;
};

void write_prediction_index(const PredictionIndex& idx, const fs::path& dir);
PredictionIndex read_prediction_index(const fs::path& dir);

/// Student RoI logits for every sample of `m`.
PredictionIndex run_predict(const StudentModel& model, const DatasetManifest& m, const fs::path& out_dir);

/// The teacher's aggregated attention maps, unmodified, as predictions.
PredictionIndex export_attention(const DatasetManifest& m, const fs::path& out_dir);

// ---- post-process --------------------------------------------------------------

struct RoIRecord {
  std::uint64_t id = 0;
  std::uint32_t turn = 0;
  RoIResult result;
  bool degenerate = false;  // score map carried no positive evidence
};

/// One JSON per sample (`sample_<id>_roi.json`, a list over turns) plus, in mask mode, the cropped
/// mask of every turn as an i8 grid; `rois.json` indexes them.
std::vector<RoIRecord> run_postprocess(const PredictionIndex& idx, const PostprocessOptions& opt,
                                       const fs::path& out_dir);

std::string roi_result_json(const RoIRecord& r, const std::string& cropped_file);
std::vector<RoIRecord> read_rois(const fs::path& dir);

// ---- eval ------------------------------------------------------------------------

struct EvalRow {
  std::uint64_t id = 0;
  std::uint32_t turn = 0;
  double iou_selection = 0.0;  // selected tokens vs the planted region
  double iou_box = 0.0;        // enclosing box of the selection vs the region's box
  bool empty = false;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // non-degenerate (sample, turn) pairs
  std::size_t degenerate = 0;
  double mean_selection = 0.0, median_selection = 0.0, mean_box = 0.0;
};

EvalReport run_eval(const DatasetManifest& gt, const std::vector<RoIRecord>& rois);
void write_eval_csv(const EvalReport& r, const fs::path& path);

// ---- ablation arms and bench ---------------------------------------------------------

enum class Arm { raw_attention, attn_prediction, label_assign, remove_sink, masked_upscale, pre_smoothing };

Arm parse_arm(const std::string& s);
const char* arm_name(Arm a);
std::vector<Arm> all_arms();

struct BenchConfig {
  TeacherConfig teacher;
  StudentConfig student;
  LabelThresholds thresholds;
  std::size_t train_samples = 256;
  std::size_t eval_samples = 64;  // held out: ids train_samples .. train_samples + eval_samples - 1
  double post_sigma = 1.0;
  double pre_sigma = 1.0;
  double student_tau = 0.5;   // sigmoid space
  double relative_tau = 0.2;  // relative spaces, equal to the default foreground threshold
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<Arm> arms = all_arms();
};

/// Student settings used by the bench: the default architecture with a desk-scale optimization
/// recipe (smaller batches, more epochs, larger peak learning rate).
StudentConfig benchmark_student_config();

struct ArmRecipe {
  bool trains = true;
  TargetOptions targets;
  LossKind loss = LossKind::bce;
  PostprocessOptions post;
  std::string model_key;  // arms sharing a key share one trained checkpoint
};

ArmRecipe arm_recipe(Arm a, const BenchConfig& cfg);

struct RunSummary {
  std::string arm;
  std::uint64_t seed = 0;
  std::uint32_t height = 0, width = 0;
  std::size_t eval_rows = 0;
  double mean_iou = 0.0, median_iou = 0.0, mean_box_iou = 0.0;
  double initial_loss = 0.0, final_loss = 0.0, converged_loss = 0.0;
  std::size_t degenerate_train = 0, degenerate_eval = 0;
  std::string checkpoint_hash;
};

void write_run_summary(const RunSummary& s, const fs::path& path);
std::optional<RunSummary> read_run_summary(const fs::path& path, std::string* error = nullptr);

/// Runs every (seed, arm) under work_dir/seed_<s>/..., writes run.json per arm and returns the summaries.
std::vector<RunSummary> run_bench(const BenchConfig& cfg, const fs::path& work_dir,
                                  const std::function<void(const RunSummary&)>& progress = {});

/// Report CSV with one row per run summary found (recursively) under the given directories.
std::vector<RunSummary> collect_runs(const std::vector<fs::path>& dirs, std::vector<std::string>* warnings = nullptr);
void write_report_csv(const std::vector<RunSummary>& runs, const fs::path& path);

/// FNV-1a over every regular file below `dir` (relative path + content), in sorted path order.
std::uint64_t hash_tree(const fs::path& dir);

}  // namespace sdrpn
