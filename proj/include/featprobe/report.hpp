#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace featprobe {

// One measured quantity inside a MetricReport. `status` is "ok" or
// "failed"; failures keep their diagnostics instead of poisoning the run.
struct MetricEntry {
  std::string name;
  std::string status = "ok";
  double value = 0.0;
  std::optional<double> mean;    // across seeds, when there are several
  std::optional<double> stddev;
  std::vector<double> per_seed;
  nlohmann::json diagnostics;    // object; error text, curves, bandwidths

  nlohmann::json to_json() const;
};

// The machine-readable result document every command can emit. Always
// carries enough provenance to reproduce the run: seeds, config hash,
// toolkit version, RNG description and thread count.
struct MetricReport {
  std::string experiment;
  std::vector<std::uint64_t> seeds;
  std::vector<MetricEntry> metrics;
  std::string config_hash;
  std::string toolkit_version;
  std::string rng;
  int threads = 1;
  double wall_clock_sec = 0.0;

  nlohmann::json to_json() const;
};

MetricReport report_skeleton(const std::string& experiment);

// Stable hex fingerprint of a JSON config (canonical key order).
std::string config_fingerprint(const nlohmann::json& j);

// Minimal JSON Schema checker covering the subset the shipped schemas use:
// type, properties, required, items, enum, additionalProperties. Returns
// false and fills `first_error` on the first violation found.
bool validate_schema(const nlohmann::json& doc, const nlohmann::json& schema,
                     std::string* first_error);

// The schema for MetricReport documents, embedded so validation works
// without locating the installed docs/ copy. The shipped file
// docs/schema/metric_report.schema.json holds the same text.
const char* metric_report_schema_text();

// Sweep output row. CSV columns: sweep_value,metric,mean,std. The std cell
// is left empty when only one seed contributed.
struct CurveRow {
  double sweep_value = 0.0;
  std::string metric;
  double mean = 0.0;
  std::optional<double> stddev;
};

// Writes rows sorted by (sweep_value, metric) with a fixed header.
void write_curve_csv(std::vector<CurveRow> rows, std::ostream& os);

// Atomic text-file write (temp file + rename).
void write_text_file(const std::string& path, const std::string& content,
                     bool overwrite = true);

}  // namespace featprobe
