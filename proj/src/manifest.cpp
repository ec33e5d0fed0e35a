#include "sdrpn/manifest.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace sdrpn {

using nlohmann::json;

void write_manifest(const DatasetManifest& m, const std::filesystem::path& path) {
  json j;
  j["version"] = 1;
  j["height"] = m.height;
  j["width"] = m.width;
  j["feature_dim"] = m.feature_dim;
  j["seed"] = m.seed;
  j["samples"] = json::array();
  for (const auto& s : m.samples) {
    json r{{"id", s.id},           {"attention", s.attention}, {"features", s.features},
           {"queries", s.queries}, {"gt_mask", s.gt_mask},     {"turns", s.turns}};
    if (s.pseudo_label) r["pseudo_label"] = *s.pseudo_label;
    j["samples"].push_back(std::move(r));
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw ManifestError("cannot write manifest " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw ManifestError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ManifestError("cannot open manifest " + path.string());
  DatasetManifest m;
  try {
    const json j = json::parse(is);
    m.height = j.at("height").get<std::uint32_t>();
    m.width = j.at("width").get<std::uint32_t>();
    m.feature_dim = j.at("feature_dim").get<std::uint32_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& r : j.at("samples")) {
      SampleRecord s;
      s.id = r.at("id").get<std::uint64_t>();
      s.attention = r.at("attention").get<std::string>();
      s.features = r.at("features").get<std::string>();
      s.queries = r.at("queries").get<std::string>();
      s.gt_mask = r.at("gt_mask").get<std::string>();
      if (r.contains("pseudo_label")) s.pseudo_label = r["pseudo_label"].get<std::string>();
      s.turns = r.value("turns", 1u);
      m.samples.push_back(std::move(s));
    }
  } catch (const json::exception& e) {
    throw ManifestError("malformed manifest " + path.string() + ": " + e.what());
  }
  m.root = path.parent_path();
  return m;
}

void validate_manifest(const DatasetManifest& m, bool check_files) {
  std::set<std::uint64_t> ids;
  for (const auto& s : m.samples) {
    if (!ids.insert(s.id).second) throw ManifestError("duplicate sample id " + std::to_string(s.id));
    if (s.turns == 0) throw ManifestError("sample " + std::to_string(s.id) + " has zero turns");
    if (!check_files) continue;
    std::vector<std::string> paths{s.attention, s.features, s.queries, s.gt_mask};
    if (s.pseudo_label) paths.push_back(*s.pseudo_label);
    for (const auto& p : paths) {
      try {
        (void)read_grid(m.resolve(p));
      } catch (const GridError& e) {
        throw ManifestError("sample " + std::to_string(s.id) + ": " + e.what());
      }
    }
  }
}

}  // namespace sdrpn
