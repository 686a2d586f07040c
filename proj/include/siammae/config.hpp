#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "siammae/errors.hpp"

namespace siammae {

// Run configuration plumbing: JSON files, dotted-key command-line overrides,
// and the resolved-config snapshot every run drops in its output directory so
// experiments can be re-run without the original command line.

inline nlohmann::json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  auto j = nlohmann::json::parse(in, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) throw DataError("unparseable JSON in " + path);
  return j;
}

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << j.dump(2) << "\n";
}

// Recursively folds `patch` into `base`: objects merge key-by-key, everything
// else (including arrays) replaces wholesale.
inline void deep_merge(nlohmann::json& base, const nlohmann::json& patch) {
  if (!base.is_object() || !patch.is_object()) {
    base = patch;
    return;
  }
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (base.contains(it.key()))
      deep_merge(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

// Sets a dotted key ("train.mask.ratio_f2") to a JSON value, creating
// intermediate objects as needed.
inline void set_dotted_key(nlohmann::json& root, const std::string& key,
                           const nlohmann::json& value) {
  nlohmann::json* node = &root;
  size_t pos = 0;
  while (true) {
    const size_t dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
    if (part.empty()) throw UsageError("override has an empty key segment: " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

// Parses the right-hand side of an override as JSON when possible (numbers,
// booleans, arrays, quoted strings); anything unparseable is a plain string.
inline nlohmann::json parse_override_value(const std::string& text) {
  auto j = nlohmann::json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (j.is_discarded()) return nlohmann::json(text);
  return j;
}

// Applies one "dotted.key=value" assignment.
inline void apply_override(nlohmann::json& root, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw UsageError("override must look like key=value, got: " + assignment);
  set_dotted_key(root, assignment.substr(0, eq), parse_override_value(assignment.substr(eq + 1)));
}

inline void apply_overrides(nlohmann::json& root, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) apply_override(root, a);
}

inline void write_config_snapshot(const std::string& out_dir, const nlohmann::json& resolved) {
  std::filesystem::create_directories(out_dir);
  write_json_file(out_dir + "/config.json", resolved);
}

}  // namespace siammae
