// Self-distillation training loop and checkpoint I/O.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdrpn/manifest.hpp"
#include "sdrpn/optim.hpp"
#include "sdrpn/student.hpp"
#include "sdrpn/targets.hpp"

namespace sdrpn {

struct TrainingExample {
  std::uint64_t id = 0;
  std::size_t visual_tokens = 0;
  Mat frozen;  // cached frozen-backbone output
  ExampleTargets targets;
};

struct StepLog {
  std::uint64_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t valid_tokens = 0;
};

struct TrainReport {
  std::size_t examples = 0;
  std::size_t skipped = 0;  // samples without a single labelled token
  std::uint64_t steps = 0;
  double initial_loss = 0.0;    // full-data masked loss before the first update
  double converged_loss = 0.0;  // full-data masked loss after the last update
  double running_loss = 0.0;    // mean step loss over the last max(1, ceil(T/10)) steps
  std::uint64_t frozen_hash = 0;
  std::vector<StepLog> log;
};

/// Loads (or builds with `fallback`) targets for every sample and caches the frozen backbone.
/// Samples whose targets are entirely ignored are counted in `skipped` and left out.
std::vector<TrainingExample> prepare_examples(const StudentModel& model, const DatasetManifest& m,
                                              const TargetOptions& fallback, std::size_t* skipped = nullptr);

/// Full-data masked loss (sum over tokens / valid count) under `kind`.
double dataset_loss(const StudentModel& model, const std::vector<TrainingExample>& ex, LossKind kind);

/// Mini-batch AdamW training in place. cfg.total_steps == 0 means epochs * ceil(N / batch_size).
/// Within a batch, per-example gradient sums are accumulated in batch order and divided by the
/// batch's valid token count, so results do not depend on scheduling.
TrainReport train_student(StudentModel& model, const std::vector<TrainingExample>& ex, const StudentConfig& cfg);

/// Reads the manifest's targets (computing default labels when a sample has none), builds the
/// student from `teacher` or a freshly seeded teacher, trains, and writes the checkpoint to `out`.
TrainReport distill_train(const DatasetManifest& m, const StudentConfig& cfg, const LabelThresholds& thresholds,
                          const std::filesystem::path& out, const std::optional<StudentModel>& teacher = std::nullopt);

void save_checkpoint(const StudentModel& model, std::uint64_t step, const std::filesystem::path& dir);
StudentModel load_checkpoint(const std::filesystem::path& dir, std::uint64_t* step = nullptr);

void write_loss_log(const std::vector<StepLog>& log, const std::filesystem::path& path);

std::string student_config_json(const StudentConfig& cfg);
StudentConfig student_config_from_json(const std::string& text);

}  // namespace sdrpn
