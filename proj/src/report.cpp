#include "featprobe/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "featprobe/errors.hpp"
#include "featprobe/rng.hpp"
#include "featprobe/version.hpp"

namespace featprobe {

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

nlohmann::json MetricEntry::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["status"] = status;
  j["value"] = value;
  if (mean) j["mean"] = *mean;
  if (stddev) j["std"] = *stddev;
  if (!per_seed.empty()) j["per_seed"] = per_seed;
  if (!diagnostics.is_null()) j["diagnostics"] = diagnostics;
  return j;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j;
  j["experiment"] = experiment;
  j["seeds"] = seeds;
  j["metrics"] = nlohmann::json::array();
  for (const MetricEntry& e : metrics) j["metrics"].push_back(e.to_json());
  j["config_hash"] = config_hash;
  j["toolkit_version"] = toolkit_version;
  j["rng"] = rng;
  j["threads"] = threads;
  j["wall_clock_sec"] = wall_clock_sec;
  return j;
}

MetricReport report_skeleton(const std::string& experiment) {
  MetricReport r;
  r.experiment = experiment;
  r.toolkit_version = kVersion;
  r.rng = kRngDescription;
  r.threads = max_threads();
  return r;
}

std::string config_fingerprint(const nlohmann::json& j) {
  std::ostringstream os;
  os << std::hex << fnv1a64(j.dump());
  return os.str();
}

namespace {

bool type_matches(const nlohmann::json& doc, const std::string& type) {
  if (type == "object") return doc.is_object();
  if (type == "array") return doc.is_array();
  if (type == "string") return doc.is_string();
  if (type == "number") return doc.is_number();
  if (type == "integer") return doc.is_number_integer();
  if (type == "boolean") return doc.is_boolean();
  if (type == "null") return doc.is_null();
  return false;
}

bool validate_at(const nlohmann::json& doc, const nlohmann::json& schema,
                 const std::string& where, std::string* err) {
  if (schema.contains("type")) {
    const std::string type = schema["type"].get<std::string>();
    if (!type_matches(doc, type)) {
      *err = where + ": expected " + type + ", got " +
             std::string(doc.type_name());
      return false;
    }
  }
  if (schema.contains("enum")) {
    bool hit = false;
    for (const auto& v : schema["enum"])
      if (v == doc) hit = true;
    if (!hit) {
      *err = where + ": value " + doc.dump() + " not in enum";
      return false;
    }
  }
  if (doc.is_object()) {
    if (schema.contains("required")) {
      for (const auto& k : schema["required"]) {
        if (!doc.contains(k.get<std::string>())) {
          *err = where + ": missing required key '" + k.get<std::string>() + "'";
          return false;
        }
      }
    }
    const nlohmann::json* props =
        schema.contains("properties") ? &schema["properties"] : nullptr;
    if (props) {
      for (auto it = props->begin(); it != props->end(); ++it) {
        if (doc.contains(it.key())) {
          if (!validate_at(doc[it.key()], it.value(), where + "." + it.key(),
                           err))
            return false;
        }
      }
    }
    if (schema.contains("additionalProperties") &&
        schema["additionalProperties"].is_boolean() &&
        !schema["additionalProperties"].get<bool>()) {
      for (auto it = doc.begin(); it != doc.end(); ++it) {
        if (!props || !props->contains(it.key())) {
          *err = where + ": unexpected key '" + it.key() + "'";
          return false;
        }
      }
    }
  }
  if (doc.is_array() && schema.contains("items")) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      if (!validate_at(doc[i], schema["items"],
                       where + "[" + std::to_string(i) + "]", err))
        return false;
    }
  }
  return true;
}

}  // namespace

bool validate_schema(const nlohmann::json& doc, const nlohmann::json& schema,
                     std::string* first_error) {
  std::string err;
  bool ok = validate_at(doc, schema, "$", &err);
  if (!ok && first_error) *first_error = err;
  return ok;
}

const char* metric_report_schema_text() {
  return R"({
  "type": "object",
  "required": ["experiment", "seeds", "metrics", "config_hash",
               "toolkit_version", "rng", "threads", "wall_clock_sec"],
  "additionalProperties": false,
  "properties": {
    "experiment": {"type": "string"},
    "seeds": {"type": "array", "items": {"type": "integer"}},
    "metrics": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["name", "status", "value"],
        "additionalProperties": false,
        "properties": {
          "name": {"type": "string"},
          "status": {"type": "string", "enum": ["ok", "failed"]},
          "value": {"type": "number"},
          "mean": {"type": "number"},
          "std": {"type": "number"},
          "per_seed": {"type": "array", "items": {"type": "number"}},
          "diagnostics": {"type": "object"}
        }
      }
    },
    "config_hash": {"type": "string"},
    "toolkit_version": {"type": "string"},
    "rng": {"type": "string"},
    "threads": {"type": "integer"},
    "wall_clock_sec": {"type": "number"}
  }
})";
}

void write_curve_csv(std::vector<CurveRow> rows, std::ostream& os) {
  std::stable_sort(rows.begin(), rows.end(),
                   [](const CurveRow& a, const CurveRow& b) {
                     if (a.sweep_value != b.sweep_value)
                       return a.sweep_value < b.sweep_value;
                     return a.metric < b.metric;
                   });
  os << "sweep_value,metric,mean,std\n";
  char buf[64];
  auto fmt = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  for (const CurveRow& r : rows) {
    os << fmt(r.sweep_value) << "," << r.metric << "," << fmt(r.mean) << ",";
    if (r.stddev) os << fmt(*r.stddev);
    os << "\n";
  }
}

void write_text_file(const std::string& path, const std::string& content,
                     bool overwrite) {
  if (!overwrite) {
    std::ifstream probe(path);
    if (probe.good()) throw IoError("refusing to overwrite " + path);
  }
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move " + tmp + " into place at " + path);
}

}  // namespace featprobe
