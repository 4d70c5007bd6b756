#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fluency {

enum class Errc {
  MissingFile,
  UnsupportedEncoding,
  CorruptHeader,
  TooShortInput,
  MalformedJson,
  OverlappingRegions,
  NegativeTimestamps,
  InvalidThreshold,
  TooShortChunk,
  BadMagic,
  VersionMismatch,
  TruncatedData,
  NonFiniteValue,
  EmptyChunkFrames,
  DimensionExceedsTarget,
  EmptyUtterance,
  EmptyDataset,
  NonFiniteLoss,
  GradientMismatch,
  OutOfRange,
  LengthMismatch,
  ConstantInput,
  TooFewSamples,
  InvalidConfig,
  Io,
};

constexpr std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::MissingFile: return "MissingFile";
    case Errc::UnsupportedEncoding: return "UnsupportedEncoding";
    case Errc::CorruptHeader: return "CorruptHeader";
    case Errc::TooShortInput: return "TooShortInput";
    case Errc::MalformedJson: return "MalformedJson";
    case Errc::OverlappingRegions: return "OverlappingRegions";
    case Errc::NegativeTimestamps: return "NegativeTimestamps";
    case Errc::InvalidThreshold: return "InvalidThreshold";
    case Errc::TooShortChunk: return "TooShortChunk";
    case Errc::BadMagic: return "BadMagic";
    case Errc::VersionMismatch: return "VersionMismatch";
    case Errc::TruncatedData: return "TruncatedData";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::EmptyChunkFrames: return "EmptyChunkFrames";
    case Errc::DimensionExceedsTarget: return "DimensionExceedsTarget";
    case Errc::EmptyUtterance: return "EmptyUtterance";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::GradientMismatch: return "GradientMismatch";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ConstantInput: return "ConstantInput";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::InvalidConfig: return "InvalidConfig";
    case Errc::Io: return "Io";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the `Errc` codes so
/// callers (and the CLI exit-code mapping) can branch on the kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace fluency
