#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace vfrpool {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <typename S>
using RowVec = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using MatrixXd = Mat<double>;
using VectorXd = Vec<double>;

// Error kinds surfaced by the library. The CLI prints the kind name so the
// failing stage is identifiable from a one-line diagnostic.
enum class ErrorKind {
  MalformedHeader,
  UnsupportedEncoding,
  EmptyAudio,
  AudioTooShort,
  DimensionMismatch,
  EmptyCurve,
  UnknownVariant,
  WeightNotNormalized,
  AllZeroConditioning,
  ShapeMismatch,
  InvalidConfig,
  UtteranceTooShort,
  LabelOutOfRange,
  EmptyDataset,
  ZeroVector,
  DegenerateTrials,
  LengthMismatch,
  IoError,
  ParseError,
};

constexpr std::string_view error_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MalformedHeader: return "MalformedHeader";
    case ErrorKind::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorKind::EmptyAudio: return "EmptyAudio";
    case ErrorKind::AudioTooShort: return "AudioTooShort";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::EmptyCurve: return "EmptyCurve";
    case ErrorKind::UnknownVariant: return "UnknownVariant";
    case ErrorKind::WeightNotNormalized: return "WeightNotNormalized";
    case ErrorKind::AllZeroConditioning: return "AllZeroConditioning";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    case ErrorKind::UtteranceTooShort: return "UtteranceTooShort";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::DegenerateTrials: return "DegenerateTrials";
    case ErrorKind::LengthMismatch: return "LengthMismatch";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ParseError: return "ParseError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(error_name(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace vfrpool
