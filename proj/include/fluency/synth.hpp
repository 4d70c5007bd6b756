#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "fluency/audio.hpp"
#include "fluency/error.hpp"
#include "fluency/random.hpp"

// Synthetic utterances: harmonic tone bursts separated by low-level noise.
// The class label sets the burst pitch and the speaking rate of the transcript.

namespace fluency::synth {

struct Utterance {
  std::string id;
  int label = 0;
  int score = 0;  // 0-10 rating consistent with `label`
  double f0 = 150.0;
  double lead = 0.25;
  double tail = 0.25;
  std::vector<double> bursts;  // seconds
  std::vector<double> gaps;    // seconds, bursts.size() - 1 entries
  std::string transcript;
  std::string split;

  double duration() const {
    double d = lead + tail;
    for (double b : bursts) d += b;
    for (double g : gaps) d += g;
    return d;
  }
};

inline constexpr double kNoiseAmplitude = 1e-3;

inline AudioBuffer render(const Utterance& u, std::uint64_t seed, int sample_rate = kTargetSampleRate) {
  if (u.gaps.size() + 1 != u.bursts.size()) throw Error(Errc::InvalidConfig, u.id + ": need one gap between each burst");
  SplitMix64 rng(seed ^ fnv1a64(u.id));
  AudioBuffer buf;
  buf.id = u.id;
  buf.sample_rate = sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(u.duration() * sample_rate));
  buf.samples.resize(n);
  for (auto& s : buf.samples) s = kNoiseAmplitude * rng.uniform(-1.0, 1.0);

  std::vector<double> phase(4);
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double ramp = 0.005;
  double t0 = u.lead;
  for (std::size_t b = 0; b < u.bursts.size(); ++b) {
    const double len = u.bursts[b];
    const auto first = static_cast<std::size_t>(std::llround(t0 * sample_rate));
    const auto count = static_cast<std::size_t>(std::llround(len * sample_rate));
    for (std::size_t i = 0; i < count && first + i < n; ++i) {
      const double t = static_cast<double>(i) / sample_rate;
      double env = 1.0;
      if (t < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * t / ramp);
      if (len - t < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (len - t) / ramp);
      double v = 0.0;
      for (int h = 1; h <= 4; ++h) v += std::sin(2.0 * std::numbers::pi * h * u.f0 * t + phase[static_cast<std::size_t>(h - 1)]) / h;
      buf.samples[first + i] += 0.4 * env * v;
    }
    t0 += len + (b < u.gaps.size() ? u.gaps[b] : 0.0);
  }
  return buf;
}

namespace detail {

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words{"we",    "went",  "to",     "the",    "market", "and",   "bought",
                                              "some",  "fresh", "bread",  "because", "it",    "was",   "early",
                                              "today", "my",    "friend", "said",   "that",   "school", "opens"};
  return words;
}

inline std::string make_transcript(int label, const std::vector<double>& bursts, SplitMix64& rng) {
  static const double rate[3] = {1.2, 2.4, 3.6};  // words per second of speech
  std::string out;
  const auto& vocab = vocabulary();
  for (double b : bursts) {
    const int words = std::max(1, static_cast<int>(std::lround(b * rate[label % 3])));
    for (int w = 0; w < words; ++w) {
      const auto& word = vocab[rng.below(vocab.size())];
      out += (out.empty() ? "" : " ") + word;
      if (label == 0 && rng.uniform() < 0.3) out += " " + word;  // disfluent repetition
    }
  }
  return out;
}

inline int score_for(int label, SplitMix64& rng) {
  if (label == 0) return static_cast<int>(rng.below(6));
  if (label == 1) return 6 + static_cast<int>(rng.below(2));
  return 8 + static_cast<int>(rng.below(3));
}

}  // namespace detail

/// Three classes with distinct pitch (110/200/340 Hz) and speaking rate. Gaps
/// sit well above 300 ms so each burst becomes one breath group.
inline std::vector<Utterance> separable_corpus(int count, std::uint64_t seed, int min_chunks = 2, int max_chunks = 8,
                                               const std::string& prefix = "utt") {
  static const double f0[3] = {110.0, 200.0, 340.0};
  SplitMix64 rng(seed * 0x2545F4914F6CDD1DULL + 3);
  std::vector<Utterance> out;
  for (int i = 0; i < count; ++i) {
    Utterance u;
    char id[64];
    std::snprintf(id, sizeof id, "%s%03d", prefix.c_str(), i);
    u.id = id;
    u.label = i % 3;
    u.score = detail::score_for(u.label, rng);
    u.f0 = f0[u.label] * rng.uniform(0.95, 1.05);
    u.lead = rng.uniform(0.15, 0.3);
    u.tail = rng.uniform(0.15, 0.3);
    const int m = min_chunks + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_chunks - min_chunks + 1)));
    for (int b = 0; b < m; ++b) u.bursts.push_back(rng.uniform(0.25, 0.6));
    for (int g = 0; g + 1 < m; ++g) u.gaps.push_back(rng.uniform(0.45, 0.7));
    u.transcript = detail::make_transcript(u.label, u.bursts, rng);
    out.push_back(std::move(u));
  }
  return out;
}

/// Pauses spread across the 200-350 ms sweep range; bursts stay above the
/// 100 ms minimum so no short-chunk merging happens.
inline std::vector<Utterance> sweep_corpus(int count, std::uint64_t seed) {
  SplitMix64 rng(seed * 0x9E3779B97F4A7C15ULL + 11);
  std::vector<Utterance> out;
  for (int i = 0; i < count; ++i) {
    Utterance u;
    u.id = "sw" + std::to_string(i);
    u.label = i % 3;
    u.score = detail::score_for(u.label, rng);
    u.f0 = rng.uniform(100.0, 300.0);
    const int m = 2 + static_cast<int>(rng.below(6));
    for (int b = 0; b < m; ++b) u.bursts.push_back(rng.uniform(0.15, 0.5));
    for (int g = 0; g + 1 < m; ++g) u.gaps.push_back(rng.uniform(0.12, 0.6));
    u.transcript = detail::make_transcript(u.label, u.bursts, rng);
    out.push_back(std::move(u));
  }
  return out;
}

/// Writes `<dir>/<id>.wav` for each utterance and `<dir>/manifest.jsonl`.
/// Labels are written as 0-10 scores.
inline std::filesystem::path write_corpus(const std::filesystem::path& dir, const std::vector<Utterance>& utts,
                                          std::uint64_t seed, const std::string& manifest_name = "manifest.jsonl") {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / manifest_name);
  if (!manifest) throw Error(Errc::Io, "cannot write " + (dir / manifest_name).string());
  for (const auto& u : utts) {
    write_wav(dir / (u.id + ".wav"), render(u, seed), WavEncoding::Pcm16);
    nlohmann::json j = {{"id", u.id}, {"audio", u.id + ".wav"}, {"label", u.score}, {"transcript", u.transcript}};
    if (!u.split.empty()) j["split"] = u.split;
    manifest << j.dump() << '\n';
  }
  return dir / manifest_name;
}

}  // namespace fluency::synth
