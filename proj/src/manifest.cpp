#include "featprobe/manifest.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "featprobe/errors.hpp"

namespace featprobe {

namespace fs = std::filesystem;

const ManifestEntry* Manifest::find(const std::string& role) const {
  for (const ManifestEntry& e : entries)
    if (e.role == role) return &e;
  return nullptr;
}

Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("manifest: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
  if (j.is_discarded())
    throw FormatError("manifest: " + path + " is not valid JSON");

  Manifest m;
  m.dir = fs::path(path).parent_path().string();
  try {
    m.experiment = j.at("experiment").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("entries")) {
      ManifestEntry me;
      me.role = e.at("role").get<std::string>();
      me.path = e.at("path").get<std::string>();
      me.shape = e.at("shape").get<std::vector<std::int64_t>>();
      m.entries.push_back(std::move(me));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest: missing or mistyped field in " + path + ": " +
                      e.what());
  }
  if (m.entries.empty())
    throw FormatError("manifest: no entries in " + path);

  for (const ManifestEntry& e : m.entries) {
    fs::path full = fs::path(m.dir) / e.path;
    std::vector<std::int64_t> actual;
    try {
      actual = npy::peek_shape(full.string());
    } catch (const Error& err) {
      throw DataError("manifest: entry '" + e.role + "' of " + path +
                      " is unreadable: " + err.what());
    }
    if (actual != e.shape) {
      auto fmt = [](const std::vector<std::int64_t>& s) {
        std::string out = "[";
        for (std::size_t i = 0; i < s.size(); ++i) {
          if (i) out += ", ";
          out += std::to_string(s[i]);
        }
        return out + "]";
      };
      throw DataError("manifest: entry '" + e.role + "' declares shape " +
                      fmt(e.shape) + " but file has " + fmt(actual));
    }
  }
  return m;
}

void save_manifest(const Manifest& m, const std::string& path, bool overwrite) {
  if (!overwrite) {
    std::ifstream probe(path);
    if (probe.good()) throw IoError("manifest: refusing to overwrite " + path);
  }
  nlohmann::json j;
  j["experiment"] = m.experiment;
  j["seed"] = m.seed;
  j["entries"] = nlohmann::json::array();
  for (const ManifestEntry& e : m.entries) {
    j["entries"].push_back(
        {{"role", e.role}, {"path", e.path}, {"shape", e.shape}});
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IoError("manifest: cannot open " + tmp + " for writing");
    f << j.dump(2) << "\n";
    if (!f) throw IoError("manifest: short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("manifest: cannot move " + tmp + " into place");
}

FeatureSet load_role(const Manifest& m, const std::string& role) {
  const ManifestEntry* e = m.find(role);
  if (!e) {
    std::string have;
    for (const ManifestEntry& me : m.entries) {
      if (!have.empty()) have += ", ";
      have += me.role;
    }
    throw ConfigError("manifest: no entry with role '" + role +
                      "' (available: " + have + ")");
  }
  FeatureSet fs_out = load_feature_file((fs::path(m.dir) / e->path).string());
  fs_out.role = e->role;
  fs_out.name = m.experiment + "/" + e->role;
  return fs_out;
}

}  // namespace featprobe
