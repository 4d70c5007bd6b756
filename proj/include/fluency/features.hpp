#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fluency/audio.hpp"
#include "fluency/error.hpp"
#include "fluency/segmentation.hpp"

namespace fluency {

struct WordTime {
  double start = 0.0;
  double end = 0.0;
};

struct Transcript {
  std::vector<std::string> tokens;
  std::vector<WordTime> word_times;  // empty, or one per token

  bool timed() const { return !word_times.empty(); }
};

/// Whitespace tokenization; punctuation other than apostrophes is stripped.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string raw;
  while (in >> raw) {
    std::string tok;
    for (char ch : raw) {
      if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '\'') tok.push_back(ch);
    }
    if (!tok.empty()) out.push_back(std::move(tok));
  }
  return out;
}

inline void validate_transcript(const Transcript& tr) {
  if (!tr.timed()) return;
  if (tr.word_times.size() != tr.tokens.size()) {
    throw Error(Errc::InvalidConfig, "word_times must have one entry per token");
  }
  for (std::size_t i = 1; i < tr.word_times.size(); ++i) {
    if (tr.word_times[i].start < tr.word_times[i - 1].start) {
      throw Error(Errc::InvalidConfig, "word_times starts must be non-decreasing");
    }
  }
}

/// Distributes transcript words over chunks. Timed words go to the chunk
/// holding their midpoint (words in pauses are dropped). Untimed words are
/// apportioned in order by chunk duration using largest remainders; equal
/// remainders favour the longer chunk, then the earlier one.
inline std::vector<std::vector<std::string>> assign_words(const Transcript& tr, const std::vector<Chunk>& chunks) {
  validate_transcript(tr);
  std::vector<std::vector<std::string>> out(chunks.size());
  if (chunks.empty() || tr.tokens.empty()) return out;

  if (tr.timed()) {
    for (std::size_t w = 0; w < tr.tokens.size(); ++w) {
      const double mid = 0.5 * (tr.word_times[w].start + tr.word_times[w].end);
      for (std::size_t c = 0; c < chunks.size(); ++c) {
        if (mid >= chunks[c].start && mid < chunks[c].end) {
          out[c].push_back(tr.tokens[w]);
          break;
        }
      }
    }
    return out;
  }

  const double total = std::accumulate(chunks.begin(), chunks.end(), 0.0,
                                       [](double acc, const Chunk& c) { return acc + c.duration(); });
  const auto n_words = tr.tokens.size();
  std::vector<std::size_t> counts(chunks.size(), 0);
  struct Share {
    double remainder;
    double quota;
    std::size_t chunk;
  };
  std::vector<Share> shares;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    const double quota = total > 0 ? static_cast<double>(n_words) * chunks[c].duration() / total
                                   : static_cast<double>(n_words) / static_cast<double>(chunks.size());
    counts[c] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    assigned += counts[c];
    shares.push_back({quota - static_cast<double>(counts[c]), quota, c});
  }
  std::stable_sort(shares.begin(), shares.end(), [](const Share& a, const Share& b) {
    if (std::abs(a.remainder - b.remainder) > 1e-12) return a.remainder > b.remainder;
    return a.quota > b.quota + 1e-12;
  });
  for (std::size_t r = 0; assigned < n_words; ++r, ++assigned) ++counts[shares[r % shares.size()].chunk];

  std::size_t w = 0;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    for (std::size_t k = 0; k < counts[c]; ++k) out[c].push_back(tr.tokens[w++]);
  }
  return out;
}

inline std::vector<std::string> assign_words_to_chunk(const Transcript& tr, const std::vector<Chunk>& chunks,
                                                      std::size_t index) {
  return assign_words(tr, chunks).at(index);
}

inline double speech_rate(std::size_t words, const Chunk& chunk) {
  if (!(chunk.duration() > 0)) throw Error(Errc::TooShortChunk, "chunk duration must be positive");
  return static_cast<double>(words) / chunk.duration();
}

/// Mean of the silences before and after chunk i; the utterance edges stand
/// in for missing neighbours.
inline double pause_duration(const std::vector<Chunk>& chunks, std::size_t i, std::pair<double, double> span) {
  const auto& c = chunks.at(i);
  const double before = std::max(0.0, i == 0 ? c.start - span.first : c.start - chunks[i - 1].end);
  const double after = std::max(0.0, i + 1 == chunks.size() ? span.second - c.end : chunks[i + 1].start - c.end);
  return 0.5 * (before + after);
}

/// Orthographic syllable estimate: maximal vowel groups over {a,e,i,o,u,y},
/// minus a lone final "e" when another group exists, minimum one.
inline int syllable_estimate(const std::string& word) {
  auto is_vowel = [](char ch) {
    switch (std::tolower(static_cast<unsigned char>(ch))) {
      case 'a': case 'e': case 'i': case 'o': case 'u': case 'y': return true;
      default: return false;
    }
  };
  std::string w;
  for (char ch : word) {
    if (std::isalpha(static_cast<unsigned char>(ch))) w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  int groups = 0;
  std::size_t last_group_len = 0;
  std::size_t last_group_end = 0;
  for (std::size_t i = 0; i < w.size();) {
    if (!is_vowel(w[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < w.size() && is_vowel(w[j])) ++j;
    ++groups;
    last_group_len = j - i;
    last_group_end = j;
    i = j;
  }
  const bool silent_e = groups > 1 && last_group_len == 1 && last_group_end == w.size() && w.back() == 'e';
  if (silent_e) --groups;
  return std::max(1, groups);
}

inline double articulation_rate(const std::vector<std::string>& words, const Chunk& chunk) {
  if (!(chunk.duration() > 0)) throw Error(Errc::TooShortChunk, "chunk duration must be positive");
  int syllables = 0;
  for (const auto& w : words) syllables += syllable_estimate(w);
  return syllables / chunk.duration();
}

/// Share of n-gram occurrences whose n-gram already occurred earlier.
inline double ngram_repetition(const std::vector<std::string>& tokens, int n = 2) {
  if (n < 1) throw Error(Errc::InvalidConfig, "n-gram order must be >= 1");
  const auto order = static_cast<std::size_t>(n);
  if (tokens.size() < order) return 0.0;
  std::vector<std::string> folded;
  folded.reserve(tokens.size());
  for (const auto& t : tokens) {
    std::string f;
    for (char ch : t) f.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    folded.push_back(std::move(f));
  }
  std::map<std::vector<std::string>, int> seen;
  std::size_t total = 0;
  std::size_t repeats = 0;
  for (std::size_t i = 0; i + order <= folded.size(); ++i) {
    std::vector<std::string> gram(folded.begin() + static_cast<std::ptrdiff_t>(i),
                                  folded.begin() + static_cast<std::ptrdiff_t>(i + order));
    if (seen[gram]++ > 0) ++repeats;
    ++total;
  }
  return static_cast<double>(repeats) / static_cast<double>(std::max<std::size_t>(1, total));
}

struct FluencyMarkers {
  double speech_rate = 0.0;
  double pause_duration = 0.0;
  double articulation_rate = 0.0;
  double ngram_repetition = 0.0;

  std::array<double, 4> as_array() const { return {speech_rate, pause_duration, articulation_rate, ngram_repetition}; }
};

inline constexpr std::size_t kMarkerCount = 4;

// ---------------------------------------------------------------------------
// Voice quality

struct VoiceQuality {
  std::optional<double> f0_mean;
  std::optional<double> f0_std;
  std::optional<double> shimmer_pct;
  std::optional<double> hnr_db;
  double voiced_fraction = 0.0;
};

struct PitchFrame {
  bool voiced = false;
  double f0 = 0.0;
  double r_peak = 0.0;  // normalized autocorrelation at the chosen lag
  int lag = 0;
};

namespace detail {

/// Normalized autocorrelation r(lag) = sum x[n]x[n+lag] / sqrt(E0 * E_lag).
inline double normalized_acf(std::span<const double> x, std::size_t lag) {
  double num = 0.0;
  double e0 = 0.0;
  double e1 = 0.0;
  for (std::size_t n = 0; n + lag < x.size(); ++n) {
    num += x[n] * x[n + lag];
    e0 += x[n] * x[n];
    e1 += x[n + lag] * x[n + lag];
  }
  const double den = std::sqrt(e0 * e1);
  return den > 0 ? num / den : 0.0;
}

}  // namespace detail

inline constexpr double kPitchFloorHz = 50.0;
inline constexpr double kPitchCeilingHz = 500.0;
inline constexpr double kVoicingThreshold = 0.3;

/// Autocorrelation pitch estimate for one analysis frame. The smallest-lag
/// local maximum reaching 90% of the global maximum wins, which keeps
/// period-doubled peaks from taking over.
inline PitchFrame analyse_pitch_frame(std::span<const double> frame, int sample_rate) {
  PitchFrame pf;
  const auto min_lag = static_cast<std::size_t>(std::floor(sample_rate / kPitchCeilingHz));
  const auto max_lag = std::min<std::size_t>(static_cast<std::size_t>(std::ceil(sample_rate / kPitchFloorHz)),
                                             frame.size() > 2 ? frame.size() - 2 : 0);
  if (max_lag <= min_lag + 1) return pf;
  std::vector<double> r(max_lag + 2, 0.0);
  for (std::size_t lag = min_lag - 1; lag <= max_lag + 1 && lag < frame.size(); ++lag) r[lag] = detail::normalized_acf(frame, lag);

  double global = -1.0;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) global = std::max(global, r[lag]);
  if (global <= 0) return pf;

  std::size_t best = 0;
  for (std::size_t lag = min_lag; lag <= max_lag; ++lag) {
    const bool local_max = r[lag] >= r[lag - 1] && r[lag] >= r[lag + 1];
    if (local_max && r[lag] >= 0.9 * global) {
      best = lag;
      break;
    }
  }
  if (best == 0) return pf;

  // Parabolic refinement of the peak position.
  double refined = static_cast<double>(best);
  const double a = r[best - 1];
  const double b = r[best];
  const double c = r[best + 1];
  const double denom = a - 2 * b + c;
  if (std::abs(denom) > 1e-12) refined += std::clamp(0.5 * (a - c) / denom, -0.5, 0.5);

  pf.lag = static_cast<int>(best);
  pf.r_peak = b;
  pf.voiced = b >= kVoicingThreshold;
  pf.f0 = std::clamp(sample_rate / refined, kPitchFloorHz, kPitchCeilingHz);
  return pf;
}

/// Pitch track over [begin, end) samples: 40 ms frames, 10 ms hop.
inline std::vector<PitchFrame> pitch_track(std::span<const double> samples, int sample_rate) {
  const auto frame_len = static_cast<std::size_t>(std::lround(0.040 * sample_rate));
  const auto hop = static_cast<std::size_t>(std::lround(0.010 * sample_rate));
  std::vector<PitchFrame> out;
  if (samples.size() < frame_len) return out;
  for (std::size_t off = 0; off + frame_len <= samples.size(); off += hop) {
    out.push_back(analyse_pitch_frame(samples.subspan(off, frame_len), sample_rate));
  }
  return out;
}

/// Successive positive waveform peaks spaced one period apart, searched in
/// [prev + 0.75 P, prev + 1.25 P].
inline std::vector<double> period_peak_amplitudes(std::span<const double> x, double period) {
  std::vector<double> amps;
  if (period < 2 || x.size() < static_cast<std::size_t>(period)) return amps;
  auto argmax = [&](std::size_t lo, std::size_t hi) {
    std::size_t best = lo;
    for (std::size_t i = lo; i < hi; ++i) {
      if (x[i] > x[best]) best = i;
    }
    return best;
  };
  std::size_t p = argmax(0, static_cast<std::size_t>(period));
  amps.push_back(x[p]);
  for (;;) {
    const auto lo = p + static_cast<std::size_t>(std::lround(0.75 * period));
    const auto hi = p + static_cast<std::size_t>(std::lround(1.25 * period)) + 1;
    if (hi > x.size()) break;
    p = argmax(lo, hi);
    amps.push_back(x[p]);
  }
  return amps;
}

/// F0 / shimmer / HNR for one chunk of audio.
///  - shimmer: mean |A[j+1] - A[j]| / mean A over per-period peak amplitudes
///    in voiced stretches, in percent
///  - HNR: mean over voiced frames of 10 log10(r / (1 - r))
inline VoiceQuality voice_quality(const AudioBuffer& buf, const Chunk& chunk) {
  if (chunk.duration() < 0.1 - 1e-9) throw Error(Errc::TooShortChunk, chunk.utterance_id + ": chunk shorter than 100 ms");
  const auto sr = buf.sample_rate;
  const auto begin = std::min(buf.samples.size(), static_cast<std::size_t>(std::lround(chunk.start * sr)));
  const auto end = std::min(buf.samples.size(), static_cast<std::size_t>(std::lround(chunk.end * sr)));
  const std::span<const double> x(buf.samples.data() + begin, end - begin);

  const auto frames = pitch_track(x, sr);
  VoiceQuality vq;
  if (frames.empty()) return vq;

  std::vector<double> f0s;
  double hnr_sum = 0.0;
  for (const auto& f : frames) {
    if (!f.voiced) continue;
    f0s.push_back(f.f0);
    const double r = std::clamp(f.r_peak, 1e-9, 1.0 - 1e-9);
    hnr_sum += 10.0 * std::log10(r / (1.0 - r));
  }
  vq.voiced_fraction = static_cast<double>(f0s.size()) / static_cast<double>(frames.size());
  if (f0s.empty()) return vq;

  const double mean = std::accumulate(f0s.begin(), f0s.end(), 0.0) / static_cast<double>(f0s.size());
  double var = 0.0;
  for (double f : f0s) var += (f - mean) * (f - mean);
  vq.f0_mean = mean;
  vq.f0_std = std::sqrt(var / static_cast<double>(f0s.size()));
  vq.hnr_db = hnr_sum / static_cast<double>(f0s.size());

  // Shimmer over maximal runs of voiced frames.
  const auto hop = static_cast<std::size_t>(std::lround(0.010 * sr));
  const auto frame_len = static_cast<std::size_t>(std::lround(0.040 * sr));
  double diff_sum = 0.0;
  double amp_sum = 0.0;
  std::size_t n_diffs = 0;
  std::size_t n_amps = 0;
  for (std::size_t i = 0; i < frames.size();) {
    if (!frames[i].voiced) {
      ++i;
      continue;
    }
    std::size_t j = i;
    std::vector<double> run_f0;
    while (j < frames.size() && frames[j].voiced) run_f0.push_back(frames[j++].f0);
    std::nth_element(run_f0.begin(), run_f0.begin() + static_cast<std::ptrdiff_t>(run_f0.size() / 2), run_f0.end());
    const double period = sr / run_f0[run_f0.size() / 2];
    const std::size_t s0 = i * hop;
    const std::size_t s1 = std::min(x.size(), (j - 1) * hop + frame_len);
    const auto amps = period_peak_amplitudes(x.subspan(s0, s1 - s0), period);
    for (std::size_t a = 0; a < amps.size(); ++a) {
      amp_sum += amps[a];
      ++n_amps;
      if (a > 0) {
        diff_sum += std::abs(amps[a] - amps[a - 1]);
        ++n_diffs;
      }
    }
    i = j;
  }
  if (n_diffs > 0 && amp_sum > 0) {
    vq.shimmer_pct = 100.0 * (diff_sum / static_cast<double>(n_diffs)) / (amp_sum / static_cast<double>(n_amps));
  } else {
    vq.shimmer_pct = 0.0;
  }
  return vq;
}

// ---------------------------------------------------------------------------
// Per-utterance marker assembly

struct ChunkFeatures {
  FluencyMarkers markers;
  std::optional<VoiceQuality> voice;
};

struct MarkerOptions {
  int ngram_order = 2;
  bool voice_quality = false;  // compute and append VQ values
};

inline std::vector<ChunkFeatures> compute_chunk_features(const AudioBuffer& buf, const Transcript& tr,
                                                         const std::vector<Chunk>& chunks,
                                                         const MarkerOptions& opts) {
  std::vector<ChunkFeatures> out(chunks.size());
  const auto words = assign_words(tr, chunks);
  const std::pair<double, double> span{0.0, buf.duration_seconds()};
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    auto& m = out[i].markers;
    m.speech_rate = speech_rate(words[i].size(), chunks[i]);
    m.pause_duration = pause_duration(chunks, i, span);
    m.articulation_rate = articulation_rate(words[i], chunks[i]);
    m.ngram_repetition = ngram_repetition(words[i], opts.ngram_order);
    if (opts.voice_quality && chunks[i].duration() >= 0.1 - 1e-9) out[i].voice = voice_quality(buf, chunks[i]);
  }
  return out;
}

/// Marker vector for the classifier: the four fluency markers, optionally
/// followed by (f0_mean, f0_std, shimmer_pct, hnr_db, voiced_fraction) with
/// absent values as 0.
inline std::vector<double> marker_vector(const ChunkFeatures& f, bool with_voice_quality) {
  const auto base = f.markers.as_array();
  std::vector<double> v(base.begin(), base.end());
  if (with_voice_quality) {
    const VoiceQuality vq = f.voice.value_or(VoiceQuality{});
    v.push_back(vq.f0_mean.value_or(0.0));
    v.push_back(vq.f0_std.value_or(0.0));
    v.push_back(vq.shimmer_pct.value_or(0.0));
    v.push_back(vq.hnr_db.value_or(0.0));
    v.push_back(vq.voiced_fraction);
  }
  return v;
}

/// Per-feature z-scoring with statistics from the training fold only.
struct MarkerStandardizer {
  std::vector<double> mean;
  std::vector<double> stddev;

  static MarkerStandardizer fit(const std::vector<std::vector<double>>& rows) {
    MarkerStandardizer s;
    if (rows.empty()) return s;
    const auto k = rows.front().size();
    s.mean.assign(k, 0.0);
    s.stddev.assign(k, 0.0);
    for (const auto& r : rows) {
      for (std::size_t j = 0; j < k; ++j) s.mean[j] += r[j];
    }
    for (auto& m : s.mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows) {
      for (std::size_t j = 0; j < k; ++j) s.stddev[j] += (r[j] - s.mean[j]) * (r[j] - s.mean[j]);
    }
    for (auto& sd : s.stddev) sd = std::sqrt(sd / static_cast<double>(rows.size()));
    return s;
  }

  std::vector<double> apply(const std::vector<double>& raw) const {
    std::vector<double> out(raw.size());
    for (std::size_t j = 0; j < raw.size(); ++j) {
      out[j] = stddev.at(j) > 0 ? (raw[j] - mean.at(j)) / stddev[j] : 0.0;
    }
    return out;
  }
};

inline void write_features_csv_header(std::ostream& out) {
  out << "utterance_id,chunk_index,speech_rate,pause_duration,articulation_rate,ngram_repetition,"
         "f0_mean,f0_std,shimmer_pct,hnr_db,voiced_fraction\n";
}

inline void write_features_csv_rows(std::ostream& out, const std::vector<Chunk>& chunks,
                                    const std::vector<ChunkFeatures>& feats) {
  auto num = [](double v) {
    char b[48];
    std::snprintf(b, sizeof b, "%.6g", v);
    return std::string(b);
  };
  auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string(); };
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const auto& m = feats[i].markers;
    out << chunks[i].utterance_id << ',' << chunks[i].index << ',' << num(m.speech_rate) << ','
        << num(m.pause_duration) << ',' << num(m.articulation_rate) << ',' << num(m.ngram_repetition) << ',';
    if (feats[i].voice) {
      const auto& v = *feats[i].voice;
      out << opt(v.f0_mean) << ',' << opt(v.f0_std) << ',' << opt(v.shimmer_pct) << ',' << opt(v.hnr_db) << ','
          << num(v.voiced_fraction);
    } else {
      out << ",,,,";
    }
    out << '\n';
  }
}

}  // namespace fluency
