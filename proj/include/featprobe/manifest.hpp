#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "featprobe/feature_set.hpp"

namespace featprobe {

// Experiment manifest: names the feature files that belong together and the
// seed that produced them. Paths are stored relative to the manifest file so
// a data directory can be moved wholesale.
struct ManifestEntry {
  std::string role;
  std::string path;
  std::vector<std::int64_t> shape;
};

struct Manifest {
  std::string experiment;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  std::string dir;  // directory of the manifest file; set on load

  const ManifestEntry* find(const std::string& role) const;
};

// Parses and cross-checks: every referenced file must exist and its header
// shape must match the manifest entry.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& m, const std::string& path,
                   bool overwrite = false);

// Loads the feature file behind a role, tagging the result with it.
FeatureSet load_role(const Manifest& m, const std::string& role);

}  // namespace featprobe
