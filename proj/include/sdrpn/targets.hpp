// Training targets derived from teacher attention, one flavour per ablation arm.

#pragma once

#include <string>
#include <vector>

#include "sdrpn/manifest.hpp"
#include "sdrpn/pseudo_label.hpp"
#include "sdrpn/student.hpp"

namespace sdrpn {

enum class TargetKind {
  labels,        // {-1,0,1} from the two-threshold assignment
  regression,    // a / a_max at every token (MSE arm)
  pre_smoothed,  // Gaussian-smoothed foreground indicator on labelled tokens, -1 elsewhere
};

TargetKind parse_target_kind(const std::string& s);
const char* target_kind_name(TargetKind k);

struct TargetOptions {
  TargetKind kind = TargetKind::labels;
  LabelThresholds thresholds;
  bool sink_removal = true;
  double smooth_sigma = 1.0;  // pre_smoothed only
};

struct SampleTargets {
  Grid grid;  // [turns, H, W]; i8 for labels, f64 otherwise (-1 marks ignored tokens)
  std::vector<PseudoLabelMap> labels;           // per turn
  std::vector<std::vector<std::size_t>> zeroed;  // per turn, sink tokens removed
  std::size_t degenerate_turns = 0;
  bool degenerate() const { return degenerate_turns == labels.size(); }
};

SampleTargets make_targets(const DatasetManifest& m, const SampleRecord& s, const TargetOptions& opt);

/// Targets and validity mask ([turns, H*W]) from a stored target grid.
ExampleTargets example_targets_from_grid(const Grid& g);

}  // namespace sdrpn
