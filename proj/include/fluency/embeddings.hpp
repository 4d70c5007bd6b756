#pragma once

#include <bit>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <unsupported/Eigen/FFT>

#include "fluency/audio.hpp"
#include "fluency/error.hpp"
#include "fluency/random.hpp"
#include "fluency/segmentation.hpp"

namespace fluency {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Frame-level embeddings of one utterance from one model: T rows x d columns.
struct FrameEmbedding {
  std::string model_id;
  double hop = 0.02;     // seconds per frame
  double offset = 0.0;   // centre time of frame 0, seconds
  Matrix matrix;

  Eigen::Index frames() const { return matrix.rows(); }
  Eigen::Index dim() const { return matrix.cols(); }
  double frame_center(Eigen::Index t) const { return offset + static_cast<double>(t) * hop; }
};

// ---------------------------------------------------------------------------
// FEB1 container:
//   "FEB1" | u32 version=1 | u32 id_len | id bytes | u32 dim | u32 frames |
//   u32 hop_us | u32 offset_us | frames*dim float32, row-major, little-endian

inline constexpr std::uint32_t kFebVersion = 1;

namespace detail {

inline void feb_put_u32(std::string& out, std::uint32_t v) { put_u32le(out, v); }

inline std::uint32_t feb_get_u32(const std::vector<unsigned char>& b, std::size_t& pos, const std::string& ctx) {
  if (pos + 4 > b.size()) throw Error(Errc::TruncatedData, ctx + ": header ends early");
  const auto v = read_u32le(b.data() + pos);
  pos += 4;
  return v;
}

}  // namespace detail

inline std::string encode_feb(const FrameEmbedding& fe) {
  std::string out = "FEB1";
  detail::feb_put_u32(out, kFebVersion);
  detail::feb_put_u32(out, static_cast<std::uint32_t>(fe.model_id.size()));
  out += fe.model_id;
  detail::feb_put_u32(out, static_cast<std::uint32_t>(fe.dim()));
  detail::feb_put_u32(out, static_cast<std::uint32_t>(fe.frames()));
  detail::feb_put_u32(out, static_cast<std::uint32_t>(std::llround(fe.hop * 1e6)));
  detail::feb_put_u32(out, static_cast<std::uint32_t>(std::llround(fe.offset * 1e6)));
  out.reserve(out.size() + static_cast<std::size_t>(fe.frames() * fe.dim()) * 4);
  for (Eigen::Index t = 0; t < fe.frames(); ++t) {
    for (Eigen::Index j = 0; j < fe.dim(); ++j) {
      detail::feb_put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(fe.matrix(t, j))));
    }
  }
  return out;
}

inline FrameEmbedding decode_feb(const std::vector<unsigned char>& bytes, const std::string& ctx = "FEB1") {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), "FEB1", 4) != 0) throw Error(Errc::BadMagic, ctx);
  std::size_t pos = 4;
  const auto version = detail::feb_get_u32(bytes, pos, ctx);
  if (version != kFebVersion) throw Error(Errc::VersionMismatch, ctx + ": version " + std::to_string(version));
  const auto id_len = detail::feb_get_u32(bytes, pos, ctx);
  if (pos + id_len > bytes.size()) throw Error(Errc::TruncatedData, ctx + ": model id truncated");
  FrameEmbedding fe;
  fe.model_id.assign(reinterpret_cast<const char*>(bytes.data() + pos), id_len);
  pos += id_len;
  const auto dim = detail::feb_get_u32(bytes, pos, ctx);
  const auto frames = detail::feb_get_u32(bytes, pos, ctx);
  const auto hop_us = detail::feb_get_u32(bytes, pos, ctx);
  const auto offset_us = detail::feb_get_u32(bytes, pos, ctx);
  if (dim == 0) throw Error(Errc::CorruptHeader, ctx + ": zero dimension");
  if (hop_us == 0) throw Error(Errc::CorruptHeader, ctx + ": zero hop");
  const std::uint64_t payload = static_cast<std::uint64_t>(dim) * frames * 4;
  if (bytes.size() - pos != payload) {
    throw Error(Errc::TruncatedData, ctx + ": expected " + std::to_string(payload) + " payload bytes, found " +
                                         std::to_string(bytes.size() - pos));
  }
  fe.hop = hop_us / 1e6;
  fe.offset = offset_us / 1e6;
  fe.matrix.resize(frames, dim);
  for (std::uint32_t t = 0; t < frames; ++t) {
    for (std::uint32_t j = 0; j < dim; ++j) {
      const float v = std::bit_cast<float>(detail::read_u32le(bytes.data() + pos));
      pos += 4;
      if (!std::isfinite(v)) throw Error(Errc::NonFiniteValue, ctx + ": row " + std::to_string(t));
      fe.matrix(t, j) = v;
    }
  }
  return fe;
}

inline void write_feb(const std::filesystem::path& path, const FrameEmbedding& fe) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode_feb(fe);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline FrameEmbedding read_feb(const std::filesystem::path& path) {
  return decode_feb(detail::slurp(path), path.string());
}

/// `<emb_dir>/<model_id>/<utterance_id>.feb`
inline std::filesystem::path feb_path(const std::filesystem::path& root, const std::string& model_id,
                                      const std::string& utterance_id) {
  return root / model_id / (utterance_id + ".feb");
}

// ---------------------------------------------------------------------------
// Mock embedder: log-mel filterbank + seeded Gaussian projection. A test
// fixture standing in for SSL inference; carries no claim about quality.

inline constexpr int kMockFrameSamples = 400;  // 25 ms @ 16 kHz
inline constexpr int kMockHopSamples = 320;    // 20 ms
inline constexpr int kMockFftSize = 512;
inline constexpr int kMockMelBands = 40;

namespace detail {

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Triangular mel filters (HTK scale) over [0, sr/2], bands x (fft/2+1).
inline Matrix mel_filterbank(int sample_rate, int n_fft, int bands) {
  const int bins = n_fft / 2 + 1;
  Matrix fb = Matrix::Zero(bands, bins);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(bands + 2));
  for (int i = 0; i < bands + 2; ++i) edges[static_cast<std::size_t>(i)] = mel_to_hz(mel_hi * i / (bands + 1));
  for (int b = 0; b < bands; ++b) {
    const double lo = edges[static_cast<std::size_t>(b)];
    const double mid = edges[static_cast<std::size_t>(b + 1)];
    const double hi = edges[static_cast<std::size_t>(b + 2)];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / n_fft;
      if (f > lo && f < hi) fb(b, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  return fb;
}

}  // namespace detail

/// Projection seed: (global_seed * 1000003 + FNV-1a(key)) mod 2^63.
inline std::uint64_t mock_seed(std::uint64_t global_seed, const std::string& key) {
  return (global_seed * 1000003ULL + fnv1a64(key)) & 0x7FFFFFFFFFFFFFFFULL;
}

/// Raw log-mel energies, frames x 40.
inline Matrix log_mel_frames(const AudioBuffer& buf) {
  if (buf.samples.size() < static_cast<std::size_t>(kMockFrameSamples)) {
    throw Error(Errc::TooShortInput, buf.id + ": shorter than one embedding frame");
  }
  const auto n_frames = static_cast<Eigen::Index>((buf.samples.size() - kMockFrameSamples) / kMockHopSamples + 1);
  static const Matrix fb = detail::mel_filterbank(kTargetSampleRate, kMockFftSize, kMockMelBands);
  std::vector<double> window(kMockFrameSamples);
  for (int n = 0; n < kMockFrameSamples; ++n) {
    window[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / (kMockFrameSamples - 1));
  }
  Eigen::FFT<double> fft;
  std::vector<double> frame(kMockFftSize, 0.0);
  std::vector<std::complex<double>> spec;
  Matrix out(n_frames, kMockMelBands);
  Vector power(kMockFftSize / 2 + 1);
  for (Eigen::Index t = 0; t < n_frames; ++t) {
    const auto off = static_cast<std::size_t>(t) * kMockHopSamples;
    for (int n = 0; n < kMockFrameSamples; ++n) {
      frame[static_cast<std::size_t>(n)] = buf.samples[off + static_cast<std::size_t>(n)] * window[static_cast<std::size_t>(n)];
    }
    fft.fwd(spec, frame);
    for (int k = 0; k <= kMockFftSize / 2; ++k) power(k) = std::norm(spec[static_cast<std::size_t>(k)]);
    out.row(t) = (fb * power).array().max(0.0).unaryExpr([](double e) { return std::log(e + 1e-10); }).transpose();
  }
  return out;
}

/// 25 ms / 20 ms log-mel frames projected 40 -> dim by a seeded Gaussian
/// matrix, then z-scored per column over the utterance.
inline FrameEmbedding mock_embed(const AudioBuffer& buf, int dim, std::uint64_t seed) {
  if (dim <= 0) throw Error(Errc::InvalidConfig, "mock embedding dim must be positive");
  const Matrix mel = log_mel_frames(buf);
  SplitMix64 rng(seed);
  Matrix proj(kMockMelBands, dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(kMockMelBands));
  for (int j = 0; j < dim; ++j) {
    for (int b = 0; b < kMockMelBands; ++b) proj(b, j) = rng.normal() * scale;
  }
  Matrix emb = mel * proj;
  for (Eigen::Index j = 0; j < emb.cols(); ++j) {
    const double mean = emb.col(j).mean();
    const double var = (emb.col(j).array() - mean).square().mean();
    const double sd = std::sqrt(var);
    // Relative guard: a constant column has only rounding-level spread.
    if (sd > 1e-9 * (1.0 + std::abs(mean))) {
      emb.col(j) = (emb.col(j).array() - mean) / sd;
    } else {
      emb.col(j).setZero();
    }
  }
  FrameEmbedding fe;
  fe.model_id = "mock";
  fe.hop = static_cast<double>(kMockHopSamples) / kTargetSampleRate;
  fe.offset = 0.5 * kMockFrameSamples / static_cast<double>(kTargetSampleRate);
  fe.matrix = std::move(emb);
  return fe;
}

/// Rows whose frame centre lies in [chunk.start, chunk.end).
inline FrameEmbedding slice_frames(const FrameEmbedding& fe, const Chunk& chunk) {
  FrameEmbedding out;
  out.model_id = fe.model_id;
  out.hop = fe.hop;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index t = 0; t < fe.frames(); ++t) {
    const double c = fe.frame_center(t);
    if (c >= chunk.start && c < chunk.end) rows.push_back(t);
  }
  out.offset = rows.empty() ? fe.offset : fe.frame_center(rows.front());
  out.matrix.resize(static_cast<Eigen::Index>(rows.size()), fe.dim());
  for (std::size_t r = 0; r < rows.size(); ++r) out.matrix.row(static_cast<Eigen::Index>(r)) = fe.matrix.row(rows[r]);
  return out;
}

inline Vector mean_pool(const FrameEmbedding& fe) {
  if (fe.frames() == 0) throw Error(Errc::EmptyChunkFrames, fe.model_id + ": no frames in chunk");
  return fe.matrix.colwise().sum().transpose() / static_cast<double>(fe.frames());
}

/// Zero-pads each vector's tail up to `target_dim`.
inline std::vector<Vector> project_to_common(const std::vector<Vector>& vectors, Eigen::Index target_dim) {
  std::vector<Vector> out;
  out.reserve(vectors.size());
  for (const auto& v : vectors) {
    if (v.size() > target_dim) {
      throw Error(Errc::DimensionExceedsTarget,
                  "dimension " + std::to_string(v.size()) + " exceeds target " + std::to_string(target_dim));
    }
    Vector p = Vector::Zero(target_dim);
    p.head(v.size()) = v;
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Embedding sources

/// Supplies frame-level embeddings of one utterance for one model.
class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual FrameEmbedding embed(const std::string& model, const AudioBuffer& audio) const = 0;
  virtual std::string describe() const = 0;
};

/// Reads `<root>/<model>/<utterance_id>.feb`.
class FebDirectorySource final : public EmbeddingSource {
 public:
  explicit FebDirectorySource(std::filesystem::path root) : root_(std::move(root)) {}
  FrameEmbedding embed(const std::string& model, const AudioBuffer& audio) const override {
    return read_feb(feb_path(root_, model, audio.id));
  }
  std::string describe() const override { return "feb:" + root_.string(); }

 private:
  std::filesystem::path root_;
};

/// Mock embeddings; each model name gets its own projection.
class MockSource final : public EmbeddingSource {
 public:
  MockSource(int dim, std::uint64_t global_seed) : dim_(dim), seed_(global_seed) {}
  FrameEmbedding embed(const std::string& model, const AudioBuffer& audio) const override {
    return mock_embed(audio, dim_, mock_seed(seed_, model));
  }
  std::string describe() const override { return "mock:" + std::to_string(dim_); }

 private:
  int dim_;
  std::uint64_t seed_;
};

}  // namespace fluency
