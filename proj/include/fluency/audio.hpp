#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fluency/error.hpp"

namespace fluency {

/// Mono PCM signal. Every stage downstream of `prepare_audio` sees 16 kHz,
/// peak-normalized samples.
struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 16000;
  std::string id;

  double duration_seconds() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
};

inline constexpr int kTargetSampleRate = 16000;

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::MissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline double bessel_i0(double x) {
  // Power series; converges quickly for the beta values used by the resampler.
  double sum = 1.0;
  double term = 1.0;
  const double half = x / 2.0;
  for (int k = 1; k < 64; ++k) {
    term *= (half / k) * (half / k);
    sum += term;
    if (term < sum * 1e-17) break;
  }
  return sum;
}

}  // namespace detail

/// Reads a RIFF/WAVE file. Integer PCM (8/16/24/32-bit) and IEEE float32 are
/// accepted; channels are averaged to mono and integers scaled by 2^(bits-1),
/// so a 16-bit -32768 maps to exactly -1.0.
inline AudioBuffer load_wav(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(Errc::MissingFile, path.string());
  const auto bytes = detail::slurp(path);
  const auto size = bytes.size();
  if (size < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw Error(Errc::CorruptHeader, path.string() + ": not a RIFF/WAVE file");
  }

  std::uint16_t format = 0;
  std::uint16_t channels = 0;
  std::uint32_t rate = 0;
  std::uint16_t bits = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t len = detail::read_u32le(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (len < 16 || body + len > size) throw Error(Errc::CorruptHeader, path.string() + ": bad fmt chunk");
      format = detail::read_u16le(bytes.data() + body);
      channels = detail::read_u16le(bytes.data() + body + 2);
      rate = detail::read_u32le(bytes.data() + body + 4);
      bits = detail::read_u16le(bytes.data() + body + 14);
      if (format == 0xFFFE) {
        if (len < 26) throw Error(Errc::CorruptHeader, path.string() + ": short extensible fmt");
        format = detail::read_u16le(bytes.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      // Some writers leave the streaming placeholder length; clamp to the file.
      data_len = std::min<std::size_t>(len, size - body);
    }
    pos = body + len + (len & 1u);
  }

  if (!have_fmt || data == nullptr) throw Error(Errc::CorruptHeader, path.string() + ": missing fmt or data chunk");
  if (channels == 0 || rate == 0) throw Error(Errc::CorruptHeader, path.string() + ": zero channels or rate");
  const bool is_float = format == 3 && bits == 32;
  const bool is_int = format == 1 && (bits == 8 || bits == 16 || bits == 24 || bits == 32);
  if (!is_float && !is_int) {
    throw Error(Errc::UnsupportedEncoding,
                path.string() + ": format " + std::to_string(format) + " / " + std::to_string(bits) + " bits");
  }

  const std::size_t stride = static_cast<std::size_t>(bits / 8) * channels;
  const std::size_t frames = data_len / stride;
  AudioBuffer buf;
  buf.sample_rate = static_cast<int>(rate);
  buf.id = path.stem().string();
  buf.samples.resize(frames);

  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = data + f * stride + c * (bits / 8);
      double v = 0.0;
      if (is_float) {
        v = static_cast<double>(std::bit_cast<float>(detail::read_u32le(p)));
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(detail::read_u16le(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (s & 0x800000) s -= 0x1000000;
        v = s / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(detail::read_u32le(p)) / 2147483648.0;
      }
      acc += v;
    }
    const double mono = acc / channels;
    if (!std::isfinite(mono)) throw Error(Errc::NonFiniteValue, path.string() + ": non-finite sample");
    buf.samples[f] = mono;
  }
  return buf;
}

enum class WavEncoding { Pcm16, Float32 };

/// Writes mono WAV. Pcm16 rounds to nearest and clips to [-32768, 32767].
inline void write_wav(const std::filesystem::path& path, const AudioBuffer& buf,
                      WavEncoding encoding = WavEncoding::Pcm16) {
  const std::uint16_t bits = encoding == WavEncoding::Pcm16 ? 16 : 32;
  const std::uint32_t data_len = static_cast<std::uint32_t>(buf.samples.size() * (bits / 8));
  std::string out;
  out.reserve(44 + data_len);
  out += "RIFF";
  detail::put_u32le(out, 36 + data_len);
  out += "WAVEfmt ";
  detail::put_u32le(out, 16);
  detail::put_u16le(out, encoding == WavEncoding::Pcm16 ? 1 : 3);
  detail::put_u16le(out, 1);
  detail::put_u32le(out, static_cast<std::uint32_t>(buf.sample_rate));
  detail::put_u32le(out, static_cast<std::uint32_t>(buf.sample_rate) * (bits / 8));
  detail::put_u16le(out, bits / 8);
  detail::put_u16le(out, bits);
  out += "data";
  detail::put_u32le(out, data_len);
  for (double s : buf.samples) {
    if (encoding == WavEncoding::Pcm16) {
      const double scaled = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
      detail::put_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
    } else {
      detail::put_u32le(out, std::bit_cast<std::uint32_t>(static_cast<float>(s)));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::Io, "cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel (beta 8.6,
/// roughly 85 dB stopband). Cutoff sits at 0.92 of the lower Nyquist rate.
/// Output sample n is aligned with input time n / target_hz.
inline AudioBuffer resample(const AudioBuffer& buf, int target_hz) {
  if (target_hz <= 0) throw Error(Errc::InvalidConfig, "target sample rate must be positive");
  if (buf.sample_rate <= 0) throw Error(Errc::InvalidConfig, "source sample rate must be positive");
  if (target_hz == buf.sample_rate) return buf;

  constexpr double kBeta = 8.6;
  constexpr int kZeroCrossings = 32;
  const double in_rate = buf.sample_rate;
  const double out_rate = target_hz;
  const double ratio = in_rate / out_rate;
  const double cutoff = 0.92 * std::min(1.0, out_rate / in_rate);  // cycles per input sample x2
  const double half_width = kZeroCrossings / cutoff;                // in input samples
  const double i0_beta = detail::bessel_i0(kBeta);

  const auto n_in = static_cast<std::int64_t>(buf.samples.size());
  const std::int64_t n_out = (n_in * target_hz + buf.sample_rate / 2) / buf.sample_rate;

  AudioBuffer out;
  out.id = buf.id;
  out.sample_rate = target_hz;
  out.samples.resize(static_cast<std::size_t>(n_out));
  for (std::int64_t n = 0; n < n_out; ++n) {
    const double t = static_cast<double>(n) * ratio;
    const auto lo = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::ceil(t - half_width)));
    const auto hi = std::min<std::int64_t>(n_in - 1, static_cast<std::int64_t>(std::floor(t + half_width)));
    double acc = 0.0;
    for (std::int64_t k = lo; k <= hi; ++k) {
      const double x = t - static_cast<double>(k);
      const double u = x / half_width;
      const double window = detail::bessel_i0(kBeta * std::sqrt(std::max(0.0, 1.0 - u * u))) / i0_beta;
      const double arg = std::numbers::pi * cutoff * x;
      const double sinc = std::abs(arg) < 1e-12 ? 1.0 : std::sin(arg) / arg;
      acc += buf.samples[static_cast<std::size_t>(k)] * cutoff * sinc * window;
    }
    out.samples[static_cast<std::size_t>(n)] = acc;
  }
  return out;
}

/// Peak normalization: scales so max |sample| is 1. Silence is returned as is.
inline AudioBuffer normalize_amplitude(const AudioBuffer& buf) {
  double peak = 0.0;
  for (double s : buf.samples) peak = std::max(peak, std::abs(s));
  if (peak == 0.0) return buf;
  AudioBuffer out = buf;
  for (double& s : out.samples) s /= peak;
  return out;
}

/// load -> resample to 16 kHz -> peak-normalize (per utterance).
inline AudioBuffer prepare_audio(const std::filesystem::path& path, const std::string& id) {
  AudioBuffer buf = load_wav(path);
  buf.id = id;
  return normalize_amplitude(resample(buf, kTargetSampleRate));
}

}  // namespace fluency
