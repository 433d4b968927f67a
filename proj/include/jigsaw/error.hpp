#pragma once

#include <stdexcept>
#include <string>

namespace jigsaw {

enum class ErrorCode {
  // file and format handling
  MissingFile,
  HeaderParse,
  SizeMismatch,
  NonFiniteValue,
  IoFailure,
  LabelOutOfRange,
  // resampling / preprocessing
  InvalidFactor,
  ExtentMismatch,
  UnsupportedResolution,
  InvalidScale,
  BandOutOfRange,
  DuplicateName,
  // dataset
  CenterOutOfBounds,
  InsufficientLabels,
  EmptyClassAfterSplit,
  InvalidArgument,
  // network
  ShapeMismatch,
  InvalidConfig,
  BadMagic,
  VersionMismatch,
  TruncatedFile,
  ConfigMismatch,
  EmptyDataset,
  BandMismatch,
  DimensionMismatch,
  NonFiniteGradient,
  NonFiniteLoss,
  // command line
  UnknownSubcommand,
  ConfigError,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::HeaderParse: return "HeaderParse";
    case ErrorCode::SizeMismatch: return "SizeMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::InvalidFactor: return "InvalidFactor";
    case ErrorCode::ExtentMismatch: return "ExtentMismatch";
    case ErrorCode::UnsupportedResolution: return "UnsupportedResolution";
    case ErrorCode::InvalidScale: return "InvalidScale";
    case ErrorCode::BandOutOfRange: return "BandOutOfRange";
    case ErrorCode::DuplicateName: return "DuplicateName";
    case ErrorCode::CenterOutOfBounds: return "CenterOutOfBounds";
    case ErrorCode::InsufficientLabels: return "InsufficientLabels";
    case ErrorCode::EmptyClassAfterSplit: return "EmptyClassAfterSplit";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::BandMismatch: return "BandMismatch";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

/// Numeric failures (diverging training, bad gradients) as opposed to bad
/// input data or bad usage.
inline bool is_numeric(ErrorCode code) {
  return code == ErrorCode::NonFiniteGradient || code == ErrorCode::NonFiniteLoss;
}

inline bool is_usage(ErrorCode code) {
  return code == ErrorCode::UnknownSubcommand || code == ErrorCode::ConfigError;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace jigsaw
