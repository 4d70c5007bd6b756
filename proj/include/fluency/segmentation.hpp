#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fluency/audio.hpp"
#include "fluency/error.hpp"

namespace fluency {

struct SpeechRegion {
  double start = 0.0;
  double end = 0.0;
  double duration() const { return end - start; }
  bool operator==(const SpeechRegion&) const = default;
};

/// A breath-group span [start, end) in seconds within one utterance.
struct Chunk {
  std::string utterance_id;
  int index = 0;
  double start = 0.0;
  double end = 0.0;
  double duration() const { return end - start; }
  bool operator==(const Chunk&) const = default;
};

struct VadConfig {
  double frame_ms = 30.0;
  double hop_ms = 10.0;
  double energy_floor_db = -60.0;
  double relative_threshold_db = 12.0;
  double min_speech_ms = 100.0;
  double bridge_ms = 100.0;

  void validate() const {
    if (frame_ms <= 0 || hop_ms <= 0 || min_speech_ms < 0 || bridge_ms < 0) {
      throw Error(Errc::InvalidConfig, "VAD durations must be positive");
    }
    if (hop_ms > frame_ms) throw Error(Errc::InvalidConfig, "hop_ms must not exceed frame_ms");
  }
};

inline constexpr double kDefaultDeltaMs = 300.0;

/// Half-open range of analysis frames [begin, end).
struct FrameSpan {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const FrameSpan&) const = default;
};

/// Frame grid shared by the VAD and the chunker. Frame i owns the hop-wide
/// cell centred on its window, i.e. [i*hop + (frame-hop)/2, (i+1)*hop + (frame-hop)/2).
struct FrameGrid {
  std::size_t frame_len = 0;  // samples
  std::size_t hop = 0;        // samples
  int sample_rate = 0;

  FrameGrid(const VadConfig& cfg, int rate)
      : frame_len(static_cast<std::size_t>(std::lround(cfg.frame_ms * rate / 1000.0))),
        hop(static_cast<std::size_t>(std::lround(cfg.hop_ms * rate / 1000.0))),
        sample_rate(rate) {}

  std::size_t frame_count(std::size_t n_samples) const {
    if (n_samples < frame_len) return 0;
    return (n_samples - frame_len) / hop + 1;
  }
  double hop_seconds() const { return static_cast<double>(hop) / sample_rate; }
  double cell_start(std::size_t i) const {
    return (static_cast<double>(i * hop) + (static_cast<double>(frame_len) - static_cast<double>(hop)) / 2.0) /
           sample_rate;
  }
  double cell_end(std::size_t i) const { return cell_start(i + 1); }
  double center(std::size_t i) const {
    return (static_cast<double>(i * hop) + static_cast<double>(frame_len) / 2.0) / sample_rate;
  }
};

/// Per-frame log-RMS energy in dBFS.
inline std::vector<double> frame_energies_db(const AudioBuffer& buf, const FrameGrid& grid) {
  const std::size_t n = grid.frame_count(buf.samples.size());
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const std::size_t off = i * grid.hop;
    for (std::size_t j = 0; j < grid.frame_len; ++j) acc += buf.samples[off + j] * buf.samples[off + j];
    out[i] = 10.0 * std::log10(acc / static_cast<double>(grid.frame_len) + 1e-20);
  }
  return out;
}

/// max(absolute floor, 10th-percentile noise floor + relative offset).
inline double speech_threshold_db(std::span<const double> energies, const VadConfig& cfg) {
  if (energies.empty()) return cfg.energy_floor_db;
  std::vector<double> sorted(energies.begin(), energies.end());
  std::sort(sorted.begin(), sorted.end());
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(std::ceil(0.10 * static_cast<double>(sorted.size())));
  const double noise_floor = sorted[rank == 0 ? 0 : rank - 1];
  return std::max(cfg.energy_floor_db, noise_floor + cfg.relative_threshold_db);
}

inline std::vector<bool> speech_mask(std::span<const double> energies, double threshold_db) {
  std::vector<bool> mask(energies.size());
  for (std::size_t i = 0; i < energies.size(); ++i) mask[i] = energies[i] > threshold_db;
  return mask;
}

/// Maximal runs of speech frames, gaps shorter than `bridge_frames` closed,
/// then runs shorter than `min_frames` dropped.
inline std::vector<FrameSpan> speech_runs(const std::vector<bool>& mask, std::size_t bridge_frames,
                                          std::size_t min_frames) {
  std::vector<FrameSpan> runs;
  for (std::size_t i = 0; i < mask.size();) {
    if (!mask[i]) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < mask.size() && mask[j]) ++j;
    if (!runs.empty() && i - runs.back().end < bridge_frames) {
      runs.back().end = j;
    } else {
      runs.push_back({i, j});
    }
    i = j;
  }
  std::erase_if(runs, [&](const FrameSpan& r) { return r.size() < min_frames; });
  return runs;
}

inline std::size_t ms_to_frames(double ms, double hop_ms) {
  return static_cast<std::size_t>(std::ceil(ms / hop_ms - 1e-9));
}

/// Energy-based voice activity detection.
inline std::vector<SpeechRegion> detect_speech(const AudioBuffer& buf, const VadConfig& cfg) {
  cfg.validate();
  const FrameGrid grid(cfg, buf.sample_rate);
  if (grid.frame_count(buf.samples.size()) == 0) {
    throw Error(Errc::TooShortInput, buf.id + ": shorter than one VAD frame");
  }
  const auto energies = frame_energies_db(buf, grid);
  const auto mask = speech_mask(energies, speech_threshold_db(energies, cfg));
  const auto runs = speech_runs(mask, ms_to_frames(cfg.bridge_ms, cfg.hop_ms), ms_to_frames(cfg.min_speech_ms, cfg.hop_ms));
  std::vector<SpeechRegion> regions;
  regions.reserve(runs.size());
  for (const auto& r : runs) regions.push_back({grid.cell_start(r.begin), grid.cell_start(r.end)});
  return regions;
}

/// Splits one frame span at internal non-speech gaps of at least
/// `delta_frames`, then folds sub-spans shorter than `min_frames` into a
/// neighbour (the earlier one when it exists). Gap frames that caused a split
/// belong to no span.
inline std::vector<FrameSpan> split_breath_groups(const std::vector<bool>& mask, FrameSpan region,
                                                  std::size_t delta_frames, std::size_t min_frames) {
  std::vector<FrameSpan> spans;
  std::size_t open = region.begin;
  bool seen_speech = false;
  for (std::size_t i = region.begin; i < region.end;) {
    if (mask[i]) {
      seen_speech = true;
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < region.end && !mask[j]) ++j;
    const bool internal = seen_speech && j < region.end;
    if (internal && j - i >= delta_frames) {
      spans.push_back({open, i});
      open = j;
    }
    i = j;
  }
  spans.push_back({open, region.end});

  std::vector<FrameSpan> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && (s.size() < min_frames)) {
      merged.back().end = s.end;
    } else {
      merged.push_back(s);
    }
  }
  // A short leading span has no earlier neighbour: fold it forward.
  while (merged.size() > 1 && merged.front().size() < min_frames) {
    merged[1].begin = merged.front().begin;
    merged.erase(merged.begin());
  }
  return merged;
}

/// Leading/trailing silence trimmed, internal pauses kept: the single region
/// spanning the first to the last detected speech region.
inline std::vector<SpeechRegion> speech_extent(const std::vector<SpeechRegion>& regions) {
  if (regions.empty()) return {};
  return {{regions.front().start, regions.back().end}};
}

/// Breath-group chunking of VAD regions at silences of at least `delta_ms`.
inline std::vector<Chunk> chunk_breath_groups(const AudioBuffer& buf, const std::vector<SpeechRegion>& regions,
                                              double delta_ms, const VadConfig& cfg) {
  cfg.validate();
  if (!(delta_ms > cfg.bridge_ms)) {
    throw Error(Errc::InvalidThreshold,
                "delta_ms (" + std::to_string(delta_ms) + ") must exceed bridge_ms (" + std::to_string(cfg.bridge_ms) + ")");
  }
  std::vector<Chunk> chunks;
  if (regions.empty()) return chunks;
  const FrameGrid grid(cfg, buf.sample_rate);
  const std::size_t n_frames = grid.frame_count(buf.samples.size());
  if (n_frames == 0) throw Error(Errc::TooShortInput, buf.id + ": shorter than one VAD frame");
  const auto energies = frame_energies_db(buf, grid);
  const auto mask = speech_mask(energies, speech_threshold_db(energies, cfg));
  const std::size_t delta_frames = ms_to_frames(delta_ms, cfg.hop_ms);
  const std::size_t min_frames = ms_to_frames(cfg.min_speech_ms, cfg.hop_ms);

  for (const auto& region : regions) {
    // Frames whose centre falls inside the region.
    std::size_t begin = n_frames;
    std::size_t end = 0;
    for (std::size_t i = 0; i < n_frames; ++i) {
      const double c = grid.center(i);
      if (c >= region.start && c < region.end) {
        begin = std::min(begin, i);
        end = i + 1;
      }
    }
    if (begin >= end) {
      chunks.push_back({buf.id, 0, region.start, region.end});
      continue;
    }
    const auto spans = split_breath_groups(mask, {begin, end}, delta_frames, min_frames);
    for (std::size_t s = 0; s < spans.size(); ++s) {
      const double start = s == 0 ? region.start : std::clamp(grid.cell_start(spans[s].begin), region.start, region.end);
      const double stop = s + 1 == spans.size() ? region.end : std::clamp(grid.cell_start(spans[s].end), region.start, region.end);
      if (stop > start) chunks.push_back({buf.id, 0, start, stop});
    }
  }
  for (std::size_t i = 0; i < chunks.size(); ++i) chunks[i].index = static_cast<int>(i);
  return chunks;
}

inline void validate_regions(const std::vector<SpeechRegion>& regions, const std::string& id) {
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto& r = regions[i];
    if (!std::isfinite(r.start) || !std::isfinite(r.end)) throw Error(Errc::MalformedJson, id + ": non-finite timestamp");
    if (r.start < 0 || r.end < 0) throw Error(Errc::NegativeTimestamps, id + ": negative timestamp");
    if (!(r.start < r.end)) throw Error(Errc::MalformedJson, id + ": region start must precede end");
    if (i > 0 && r.start < regions[i - 1].end) throw Error(Errc::OverlappingRegions, id + ": regions overlap or are unsorted");
  }
}

/// Parses one VAD-JSON line: {"id": ..., "regions": [{"start": s, "end": e}, ...]}.
inline std::pair<std::string, std::vector<SpeechRegion>> parse_vad_line(const std::string& line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(Errc::MalformedJson, e.what());
  }
  if (!j.is_object() || !j.contains("id") || !j["id"].is_string() || !j.contains("regions") || !j["regions"].is_array()) {
    throw Error(Errc::MalformedJson, "expected {\"id\": string, \"regions\": array}");
  }
  const std::string id = j["id"].get<std::string>();
  std::vector<SpeechRegion> regions;
  for (const auto& r : j["regions"]) {
    if (!r.is_object() || !r.contains("start") || !r.contains("end") || !r["start"].is_number() || !r["end"].is_number()) {
      throw Error(Errc::MalformedJson, id + ": region needs numeric start/end");
    }
    regions.push_back({r["start"].get<double>(), r["end"].get<double>()});
  }
  validate_regions(regions, id);
  return {id, std::move(regions)};
}

inline std::map<std::string, std::vector<SpeechRegion>> load_external_vad(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::map<std::string, std::vector<SpeechRegion>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto [id, regions] = parse_vad_line(line);
    out[id] = std::move(regions);
  }
  return out;
}

inline void write_chunks_csv(std::ostream& out, const std::vector<Chunk>& chunks, bool header = true) {
  if (header) out << "utterance_id,index,start,end\n";
  char buf[64];
  for (const auto& c : chunks) {
    std::snprintf(buf, sizeof buf, "%.4f,%.4f", c.start, c.end);
    out << c.utterance_id << ',' << c.index << ',' << buf << '\n';
  }
}

struct ChunkingStats {
  double delta_ms = 0.0;
  std::size_t utterances = 0;
  std::size_t chunk_count = 0;
  double mean_duration = 0.0;
  double std_duration = 0.0;
  /// Internal gap durations in 100 ms bins: [0,100), [100,200), ... [900,1000), >= 1000.
  std::vector<std::size_t> gap_histogram = std::vector<std::size_t>(11, 0);
  std::vector<std::size_t> per_utterance_counts;
};

/// Inter-chunk gaps within a region list, in seconds.
inline std::vector<double> chunk_gaps(const std::vector<Chunk>& chunks) {
  std::vector<double> gaps;
  for (std::size_t i = 1; i < chunks.size(); ++i) {
    const double g = chunks[i].start - chunks[i - 1].end;
    if (g > 0) gaps.push_back(g);
  }
  return gaps;
}

struct SweepInput {
  const AudioBuffer* audio = nullptr;
  std::vector<SpeechRegion> regions;
};

inline std::vector<ChunkingStats> sweep_delta(const std::vector<SweepInput>& corpus, const std::vector<double>& deltas,
                                              const VadConfig& cfg) {
  if (deltas.empty()) throw Error(Errc::InvalidConfig, "sweep needs at least one delta");
  std::vector<ChunkingStats> out;
  for (double delta : deltas) {
    ChunkingStats st;
    st.delta_ms = delta;
    double sum = 0.0;
    double sum_sq = 0.0;
    for (const auto& item : corpus) {
      const auto chunks = chunk_breath_groups(*item.audio, item.regions, delta, cfg);
      ++st.utterances;
      st.per_utterance_counts.push_back(chunks.size());
      st.chunk_count += chunks.size();
      for (const auto& c : chunks) {
        sum += c.duration();
        sum_sq += c.duration() * c.duration();
      }
      for (double g : chunk_gaps(chunks)) {
        const auto bin = std::min<std::size_t>(10, static_cast<std::size_t>(g * 10.0 + 1e-9));
        ++st.gap_histogram[bin];
      }
    }
    if (st.chunk_count > 0) {
      st.mean_duration = sum / static_cast<double>(st.chunk_count);
      st.std_duration = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(st.chunk_count) - st.mean_duration * st.mean_duration));
    }
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace fluency
