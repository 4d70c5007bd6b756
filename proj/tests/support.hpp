#pragma once

#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <unistd.h>

#include "fluency/audio.hpp"
#include "fluency/embeddings.hpp"
#include "fluency/model.hpp"
#include "fluency/random.hpp"
#include "fluency/segmentation.hpp"

namespace fluency::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() / ("fluency_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline AudioBuffer sine(double hz, double seconds, int rate = 16000, double amp = 0.5, double phase = 0.0) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.id = "sine";
  const auto n = static_cast<std::size_t>(std::llround(seconds * rate));
  b.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) b.samples[i] = amp * std::sin(2.0 * std::numbers::pi * hz * static_cast<double>(i) / rate + phase);
  return b;
}

inline AudioBuffer white_noise(double seconds, std::uint64_t seed, int rate = 16000, double amp = 0.5) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.id = "noise";
  SplitMix64 rng(seed);
  b.samples.resize(static_cast<std::size_t>(std::llround(seconds * rate)));
  for (auto& s : b.samples) s = amp * rng.uniform(-1.0, 1.0);
  return b;
}

inline AudioBuffer silence(double seconds, int rate = 16000) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.id = "silence";
  b.samples.assign(static_cast<std::size_t>(std::llround(seconds * rate)), 0.0);
  return b;
}

inline AudioBuffer concat(std::initializer_list<AudioBuffer> parts) {
  AudioBuffer out;
  out.sample_rate = parts.begin()->sample_rate;
  out.id = "joined";
  for (const auto& p : parts) out.samples.insert(out.samples.end(), p.samples.begin(), p.samples.end());
  return out;
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, SplitMix64& rng, double scale = 1.0) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = scale * rng.normal();
  }
  return m;
}

inline Sample random_sample(SplitMix64& rng, Eigen::Index chunks, int sources, Eigen::Index dim, Eigen::Index markers,
                            int label, const std::string& id = "s") {
  Sample s;
  s.id = id;
  s.label = label;
  for (int k = 0; k < sources; ++k) s.sources.push_back(random_matrix(chunks, dim, rng));
  s.markers = random_matrix(chunks, markers, rng);
  return s;
}

inline ModelConfig small_model(std::uint64_t seed = 3) {
  ModelConfig c;
  c.conv_filters = 6;
  c.kernel = 3;
  c.lstm_layers = 2;
  c.lstm_hidden = 5;
  c.dropout = 0.3;
  c.epochs = 5;
  c.batch_size = 4;
  c.seed = seed;
  return c;
}

/// Audio built from non-overlapping frames (use frame_ms == hop_ms) whose RMS
/// equals the given levels: each frame alternates +a / -a.
inline AudioBuffer blocks(const std::vector<double>& levels, int rate, int samples_per_frame) {
  AudioBuffer b;
  b.sample_rate = rate;
  b.id = "blocks";
  b.samples.reserve(levels.size() * static_cast<std::size_t>(samples_per_frame));
  for (double a : levels) {
    for (int i = 0; i < samples_per_frame; ++i) b.samples.push_back(i % 2 == 0 ? a : -a);
  }
  return b;
}

/// Reference chunker for block audio, written from the rule rather than the
/// implementation: prefix sums find every maximal non-speech run, runs with
/// speech on both sides inside the region and length >= delta split it, then
/// short pieces are merged one at a time.
inline std::vector<Chunk> brute_force_chunks(const std::vector<double>& levels, const std::vector<SpeechRegion>& regions,
                                             double delta_ms, const VadConfig& cfg, int rate) {
  const std::size_t n = levels.size();
  const int per = static_cast<int>(std::lround(cfg.hop_ms * rate / 1000.0));
  // Frame i covers samples [i*per, (i+1)*per); times are sample counts over the rate.
  auto at = [&](double samples) { return samples / rate; };
  std::vector<double> energy(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < per; ++k) acc += levels[i] * levels[i];
    energy[i] = 10.0 * std::log10(acc / per + 1e-20);
  }
  std::vector<double> sorted = energy;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t rank = static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(n)));
  const double threshold = std::max(cfg.energy_floor_db, sorted[rank > 0 ? rank - 1 : 0] + cfg.relative_threshold_db);
  std::vector<int> speech(n);
  std::vector<std::size_t> prefix(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    speech[i] = energy[i] > threshold ? 1 : 0;
    prefix[i + 1] = prefix[i] + static_cast<std::size_t>(speech[i]);
  }
  const auto delta_frames = static_cast<std::size_t>(std::ceil(delta_ms / cfg.hop_ms - 1e-9));
  const auto min_frames = static_cast<std::size_t>(std::ceil(cfg.min_speech_ms / cfg.hop_ms - 1e-9));

  std::vector<Chunk> out;
  for (const auto& reg : regions) {
    std::vector<std::size_t> inside;
    for (std::size_t i = 0; i < n; ++i) {
      const double centre = at(static_cast<double>(i * static_cast<std::size_t>(per)) + per / 2.0);
      if (centre >= reg.start && centre < reg.end) inside.push_back(i);
    }
    if (inside.empty()) {
      out.push_back({"", 0, reg.start, reg.end});
      continue;
    }
    const std::size_t b = inside.front();
    const std::size_t e = inside.back() + 1;
    std::vector<std::pair<std::size_t, std::size_t>> pieces;
    std::size_t open = b;
    for (std::size_t a = b; a < e; ++a) {
      if (speech[a] || (a > b && !speech[a - 1])) continue;
      std::size_t g = a;
      while (g < e && !speech[g]) ++g;
      const bool internal = prefix[a] - prefix[b] > 0 && prefix[e] - prefix[g] > 0;
      if (internal && g - a >= delta_frames) {
        pieces.push_back({open, a});
        open = g;
      }
    }
    pieces.push_back({open, e});
    for (bool changed = true; changed;) {
      changed = false;
      for (std::size_t i = 1; i < pieces.size(); ++i) {
        if (pieces[i].second - pieces[i].first < min_frames) {
          pieces[i - 1].second = pieces[i].second;
          pieces.erase(pieces.begin() + static_cast<std::ptrdiff_t>(i));
          changed = true;
          break;
        }
      }
    }
    while (pieces.size() > 1 && pieces[0].second - pieces[0].first < min_frames) {
      pieces[1].first = pieces[0].first;
      pieces.erase(pieces.begin());
    }
    for (std::size_t i = 0; i < pieces.size(); ++i) {
      const double s = i == 0 ? reg.start : std::clamp(at(static_cast<double>(pieces[i].first * static_cast<std::size_t>(per))), reg.start, reg.end);
      const double t = i + 1 == pieces.size() ? reg.end : std::clamp(at(static_cast<double>(pieces[i].second * static_cast<std::size_t>(per))), reg.start, reg.end);
      if (t > s) out.push_back({"", 0, s, t});
    }
  }
  return out;
}

/// Frame embeddings that carry class information for one model only: the
/// named model sees the real audio, every other model sees seeded noise of
/// the same length.
class SelectiveSource final : public EmbeddingSource {
 public:
  SelectiveSource(std::string informative, int dim, std::uint64_t seed)
      : informative_(std::move(informative)), inner_(dim, seed), dim_(dim), seed_(seed) {}

  FrameEmbedding embed(const std::string& model, const AudioBuffer& audio) const override {
    if (model == informative_) return inner_.embed(model, audio);
    AudioBuffer noise = audio;
    SplitMix64 rng(mock_seed(seed_, model + "/" + audio.id));
    for (auto& s : noise.samples) s = 0.5 * rng.uniform(-1.0, 1.0);
    return mock_embed(noise, dim_, mock_seed(seed_, model));
  }
  std::string describe() const override { return "mock-selective:" + informative_; }

 private:
  std::string informative_;
  MockSource inner_;
  int dim_;
  std::uint64_t seed_;
};

}  // namespace fluency::testing
