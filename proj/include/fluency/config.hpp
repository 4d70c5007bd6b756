#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fluency/error.hpp"
#include "fluency/model.hpp"
#include "fluency/random.hpp"
#include "fluency/segmentation.hpp"

namespace fluency {

/// Everything a pipeline run depends on. Serialized as a flat key/value object.
struct RunConfig {
  ModelConfig model;
  VadConfig vad;
  double delta_ms = kDefaultDeltaMs;
  std::vector<double> deltas{200.0, 250.0, 300.0, 350.0};

  std::string emb = "mock";  // "mock" or a FEB1 root directory
  std::vector<std::string> models{"wav2vec2", "hubert", "wavlm"};
  int mock_dim = 1024;
  int target_dim = 0;  // 0: max over model dims

  bool markers = true;
  bool vq_markers = false;
  int ngram_order = 2;
  bool chunking = true;

  std::string protocol = "cv";  // "cv" (stratified k-fold) or "split" (manifest train/test field)
  int folds = 5;

  std::string manifest;
  std::string out;
  std::string vad_json;
  std::string checkpoint;
  int jobs = 1;

  void validate() const {
    model.validate();
    vad.validate();
    if (!(delta_ms > vad.bridge_ms)) {
      throw Error(Errc::InvalidThreshold, "delta_ms must exceed bridge_ms (" + std::to_string(vad.bridge_ms) + ")");
    }
    for (double d : deltas) {
      if (!(d > vad.bridge_ms)) throw Error(Errc::InvalidThreshold, "every sweep delta must exceed bridge_ms");
    }
    if (models.empty()) throw Error(Errc::InvalidConfig, "at least one embedding model is required");
    if (mock_dim <= 0 || target_dim < 0) throw Error(Errc::InvalidConfig, "embedding dims must be positive");
    if (ngram_order < 1) throw Error(Errc::InvalidConfig, "ngram_order must be >= 1");
    if (protocol != "cv" && protocol != "split") throw Error(Errc::InvalidConfig, "protocol must be 'cv' or 'split'");
    if (folds < 2) throw Error(Errc::InvalidConfig, "folds must be >= 2");
    if (jobs < 1) throw Error(Errc::InvalidConfig, "jobs must be >= 1");
  }
};

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json j = model_config_to_json(c.model);
  j["frame_ms"] = c.vad.frame_ms;
  j["hop_ms"] = c.vad.hop_ms;
  j["energy_floor_db"] = c.vad.energy_floor_db;
  j["relative_threshold_db"] = c.vad.relative_threshold_db;
  j["min_speech_ms"] = c.vad.min_speech_ms;
  j["bridge_ms"] = c.vad.bridge_ms;
  j["delta_ms"] = c.delta_ms;
  j["deltas"] = c.deltas;
  j["emb"] = c.emb;
  j["models"] = c.models;
  j["mock_dim"] = c.mock_dim;
  j["target_dim"] = c.target_dim;
  j["markers"] = c.markers;
  j["vq_markers"] = c.vq_markers;
  j["ngram_order"] = c.ngram_order;
  j["chunking"] = c.chunking;
  j["protocol"] = c.protocol;
  j["folds"] = c.folds;
  j["manifest"] = c.manifest;
  j["out"] = c.out;
  j["vad_json"] = c.vad_json;
  j["checkpoint"] = c.checkpoint;
  j["jobs"] = c.jobs;
  return j;
}

/// Applies `j` on top of `base`; keys not present in RunConfig are rejected.
inline RunConfig merge_config(RunConfig base, const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::InvalidConfig, "config must be an object");
  const nlohmann::json known = to_json(base);
  nlohmann::json merged = known;
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known.contains(it.key())) throw Error(Errc::InvalidConfig, "unknown config key '" + it.key() + "'");
    merged[it.key()] = it.value();
  }
  try {
    RunConfig c;
    c.model = model_config_from_json(merged);
    c.vad.frame_ms = merged.at("frame_ms").get<double>();
    c.vad.hop_ms = merged.at("hop_ms").get<double>();
    c.vad.energy_floor_db = merged.at("energy_floor_db").get<double>();
    c.vad.relative_threshold_db = merged.at("relative_threshold_db").get<double>();
    c.vad.min_speech_ms = merged.at("min_speech_ms").get<double>();
    c.vad.bridge_ms = merged.at("bridge_ms").get<double>();
    c.delta_ms = merged.at("delta_ms").get<double>();
    c.deltas = merged.at("deltas").get<std::vector<double>>();
    c.emb = merged.at("emb").get<std::string>();
    c.models = merged.at("models").get<std::vector<std::string>>();
    c.mock_dim = merged.at("mock_dim").get<int>();
    c.target_dim = merged.at("target_dim").get<int>();
    c.markers = merged.at("markers").get<bool>();
    c.vq_markers = merged.at("vq_markers").get<bool>();
    c.ngram_order = merged.at("ngram_order").get<int>();
    c.chunking = merged.at("chunking").get<bool>();
    c.protocol = merged.at("protocol").get<std::string>();
    c.folds = merged.at("folds").get<int>();
    c.manifest = merged.at("manifest").get<std::string>();
    c.out = merged.at("out").get<std::string>();
    c.vad_json = merged.at("vad_json").get<std::string>();
    c.checkpoint = merged.at("checkpoint").get<std::string>();
    c.jobs = merged.at("jobs").get<int>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("bad config value: ") + e.what());
  }
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string strip_toml_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

inline nlohmann::json parse_toml_value(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  if (v == "true") return true;
  if (v == "false") return false;
  if (!v.empty() && (v.front() == '"' || v.front() == '[' || v.front() == '-' || v.front() == '+' || std::isdigit(static_cast<unsigned char>(v.front())))) {
    // Basic strings, numbers and flat arrays share JSON syntax. Underscores in
    // numbers are TOML-only.
    std::string json_text;
    bool in_string = false;
    for (char ch : v) {
      if (ch == '"') in_string = !in_string;
      if (ch == '_' && !in_string) continue;
      json_text.push_back(ch == '+' && !in_string ? ' ' : ch);
    }
    try {
      return nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::exception&) {
    }
  }
  if (!v.empty() && v.front() == '\'' && v.back() == '\'' && v.size() >= 2) return v.substr(1, v.size() - 2);
  throw Error(Errc::InvalidConfig, "TOML line " + std::to_string(line_no) + ": unsupported value '" + v + "'");
}

}  // namespace detail

/// Flat TOML: `key = value` lines with strings, numbers, booleans and
/// single-line arrays. Tables are accepted only as cosmetic grouping; their
/// keys land in the same flat namespace.
inline nlohmann::json parse_toml(const std::string& text) {
  nlohmann::json out = nlohmann::json::object();
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string s = detail::trim(detail::strip_toml_comment(line));
    if (s.empty() || s.front() == '[') continue;
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw Error(Errc::InvalidConfig, "TOML line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(s.substr(0, eq));
    if (key.size() >= 2 && key.front() == '"' && key.back() == '"') key = key.substr(1, key.size() - 2);
    if (out.contains(key)) throw Error(Errc::InvalidConfig, "TOML line " + std::to_string(line_no) + ": duplicate key " + key);
    out[key] = detail::parse_toml_value(s.substr(eq + 1), line_no);
  }
  return out;
}

/// Loads a JSON or TOML config file (chosen by extension).
inline nlohmann::json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const auto ext = path.extension().string();
  if (ext == ".toml") return parse_toml(ss.str());
  if (ext == ".json") {
    try {
      return nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedJson, path.string() + ": " + e.what());
    }
  }
  throw Error(Errc::InvalidConfig, path.string() + ": config must end in .json or .toml");
}

/// Hash of the settings that influence results (paths and job count excluded).
inline std::string config_fingerprint(const RunConfig& c) {
  nlohmann::json j = to_json(c);
  for (const char* k : {"manifest", "out", "vad_json", "checkpoint", "jobs"}) j.erase(k);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

}  // namespace fluency
