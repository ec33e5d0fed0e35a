#include "sdrpn/targets.hpp"

#include <stdexcept>

#include "sdrpn/roi.hpp"

namespace sdrpn {

TargetKind parse_target_kind(const std::string& s) {
  if (s == "labels") return TargetKind::labels;
  if (s == "regression") return TargetKind::regression;
  if (s == "pre-smoothed" || s == "pre_smoothed") return TargetKind::pre_smoothed;
  throw std::invalid_argument("unknown target kind '" + s + "' (expected labels, regression or pre-smoothed)");
}

const char* target_kind_name(TargetKind k) {
  switch (k) {
    case TargetKind::labels: return "labels";
    case TargetKind::regression: return "regression";
    case TargetKind::pre_smoothed: return "pre-smoothed";
  }
  return "?";
}

SampleTargets make_targets(const DatasetManifest& m, const SampleRecord& s, const TargetOptions& opt) {
  opt.thresholds.validate();
  const Grid att = read_grid(m.resolve(s.attention));
  if (att.ndim() != 3 || att.dim(0) != s.turns || att.dim(1) != m.height || att.dim(2) != m.width)
    throw std::invalid_argument("sample " + std::to_string(s.id) + ": attention grid shape does not match manifest");
  RealMap norms;
  if (opt.sink_removal) norms = token_norms(read_grid(m.resolve(s.features)));

  SampleTargets out;
  std::vector<LabelField> label_maps;
  std::vector<RealMap> real_maps;
  for (std::uint32_t t = 0; t < s.turns; ++t) {
    RealMap a = real_map_from_grid(att, t);
    std::vector<std::size_t> zeroed;
    if (opt.sink_removal) {
      auto sr = remove_sink_tokens(a, norms, opt.thresholds.norm);
      a = std::move(sr.map);
      zeroed = std::move(sr.zeroed);
    }
    auto labels = assign_labels(a, opt.thresholds);
    if (labels.degenerate) ++out.degenerate_turns;

    switch (opt.kind) {
      case TargetKind::labels: label_maps.push_back(labels.labels); break;
      case TargetKind::regression: {
        RealMap r(a.rows, a.cols, -1.0);
        double amax = 0.0;
        for (double v : a.data) amax = std::max(amax, v);
        if (amax > 0.0)
          for (std::size_t j = 0; j < a.size(); ++j) r[j] = a[j] / amax;
        real_maps.push_back(std::move(r));
        break;
      }
      case TargetKind::pre_smoothed: {
        RealMap fg(a.rows, a.cols, 0.0);
        for (std::size_t j = 0; j < a.size(); ++j) fg[j] = labels.labels[j] == 1 ? 1.0 : 0.0;
        const RealMap sm = gaussian_smooth(fg, GaussianKernel::make(opt.smooth_sigma));
        RealMap r(a.rows, a.cols, -1.0);
        for (std::size_t j = 0; j < a.size(); ++j)
          if (labels.labels[j] != -1) r[j] = sm[j];
        real_maps.push_back(std::move(r));
        break;
      }
    }
    out.labels.push_back(std::move(labels));
    out.zeroed.push_back(std::move(zeroed));
  }
  out.grid = opt.kind == TargetKind::labels ? stack_to_grid(label_maps) : stack_to_grid(real_maps);
  return out;
}

ExampleTargets example_targets_from_grid(const Grid& g) {
  if (g.ndim() != 3) throw std::invalid_argument("target grid must be [turns, H, W]");
  const auto v = g.to_f64();
  const Eigen::Index n = g.dim(0), hw = static_cast<Eigen::Index>(g.dim(1)) * g.dim(2);
  ExampleTargets t;
  t.targets = Eigen::Map<const Mat>(v.data(), n, hw);
  t.valid = (t.targets.array() != -1.0).cast<double>();
  t.targets = t.targets.cwiseMax(0.0);
  return t;
}

}  // namespace sdrpn
