#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mvdet/geometry.hpp"

namespace mvdet {

struct ManifestEntry {
  std::string image;      // path relative to the manifest's directory
  int label = 0;          // 0 = real, 1 = fake
  std::string split;      // "train" | "val" | "test"; empty before splitting
  int pose_class = -1;    // synthetic data carries its pose label; -1 = unknown
  std::vector<FaceRecord> faces;
};

// Line-oriented dataset index: a JSON header line followed by one JSON entry
// per line.
struct DatasetManifest {
  uint64_t seed = 0;
  std::string source;
  std::vector<ManifestEntry> entries;

  // throws ConfigError when a path appears twice
  void validate() const;

  size_t count(const std::string& split, int label) const;
  std::vector<int> indices(const std::string& split) const;

  void save(const std::filesystem::path& path) const;
  static DatasetManifest load(const std::filesystem::path& path);
};

}  // namespace mvdet
