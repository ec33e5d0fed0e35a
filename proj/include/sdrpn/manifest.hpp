// Dataset manifest: a JSON index of per-sample GRID files.

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sdrpn/grid.hpp"

namespace sdrpn {

struct SampleRecord {
  std::uint64_t id = 0;
  std::string attention;   // [turns, H, W] f64, aggregated teacher attention per turn
  std::string features;    // [H, W, d] f32 visual token features
  std::string queries;     // [turns, d] f32 query-token embeddings
  std::string gt_mask;     // [H, W] i8 planted region
  // [turns, H, W] training targets: i8 labels in {-1,0,1}, or f64 soft targets with -1 = ignored
  std::optional<std::string> pseudo_label;
  std::uint32_t turns = 1;
};

struct DatasetManifest {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t feature_dim = 0;
  std::uint64_t seed = 0;
  std::vector<SampleRecord> samples;

  /// Directory that relative sample paths resolve against; not serialized.
  std::filesystem::path root;

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
};

class ManifestError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest read_manifest(const std::filesystem::path& path);

/// Checks id uniqueness; with `check_files`, also that every referenced file parses as a Grid.
void validate_manifest(const DatasetManifest& m, bool check_files);

}  // namespace sdrpn
