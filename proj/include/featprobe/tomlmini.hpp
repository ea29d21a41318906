#pragma once

#include <string>

#include <nlohmann/json.hpp>

namespace featprobe {

// Parses the TOML subset the config files use into JSON: [table] and
// [dotted.table] headers, dotted keys, strings with basic escapes,
// integers, floats, booleans and flat arrays, with # comments. Anything
// fancier (dates, inline tables, multiline strings) is rejected with a
// ConfigError naming the line.
nlohmann::json parse_toml(const std::string& text);
nlohmann::json parse_toml_file(const std::string& path);

// Loads a config by extension: .toml through the parser above, .json
// directly. The two forms are interchangeable.
nlohmann::json load_config_file(const std::string& path);

}  // namespace featprobe
