#pragma once

// Entropy-based variable frame rate analysis. The oversampled (2.5 ms) mel
// spectrum yields an entropy curve; per-utterance thresholds on that curve
// set a local picking rate, and the resulting pick mask is summed in groups
// of four to give one conditioning value per 10 ms frame.

#include "vfrpool/dsp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace vfrpool {

inline constexpr int kEntropyBufferFrames = 12;  // 30 ms at 2.5 ms hop
inline constexpr int kEntropyHopFrames = 6;      // 15 ms
inline constexpr int kOversampleFactor = 4;      // 10 ms / 2.5 ms
inline constexpr double kTraceFloor = 1e-10;

struct EntropyCurve {
  std::vector<double> values;
  int dim = 0;
  int buffer_frames = kEntropyBufferFrames;
  int hop_frames = kEntropyHopFrames;
  double hop_ms = 15.0;

  std::size_t size() const noexcept { return values.size(); }
};

struct Thresholds {
  static constexpr double w1 = 0.7;
  static constexpr double w2 = 0.8;
  static constexpr double w3 = 0.5;

  double t1 = 0, t2 = 0, t3 = 0;
  double m_max = 0, m_med = 0, m_min = 0;
};

struct PickMask {
  std::vector<std::uint8_t> bits;  // one per 2.5 ms frame

  std::size_t size() const noexcept { return bits.size(); }
  std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
};

struct ConditioningVector {
  VectorXd values;  // integers 0..4 stored as reals, one per 10 ms frame

  Eigen::Index size() const noexcept { return values.size(); }
};

/// Gaussian differential entropy with the log-determinant replaced by the log
/// of the covariance trace: K ln sqrt(2 pi) + ln max(trace, floor).
inline double trace_entropy(int dim, double trace) {
  return dim * std::log(std::sqrt(2.0 * std::numbers::pi)) + std::log(std::max(trace, kTraceFloor));
}

/// Sum of per-band population variances over the rows of `block`.
inline double variance_trace(const Eigen::Ref<const MatrixXd>& block) {
  const RowVec<double> mean = block.colwise().mean();
  return (block.rowwise() - mean).array().square().colwise().sum().sum() / static_cast<double>(block.rows());
}

inline EntropyCurve entropy_curve(const MelSpectrogram& mel) {
  if (std::abs(mel.hop_ms - kVfrFrames.hop_ms) > 1e-9) {
    throw Error(ErrorKind::DimensionMismatch, "entropy curve expects a 2.5 ms mel spectrogram");
  }
  const int n = mel.num_frames();
  if (n < kEntropyBufferFrames) {
    throw Error(ErrorKind::AudioTooShort, std::to_string(n) + " oversampled frames, need at least " +
                                              std::to_string(kEntropyBufferFrames));
  }
  EntropyCurve curve;
  curve.dim = mel.num_bands();
  const int points = (n - kEntropyBufferFrames) / kEntropyHopFrames + 1;
  curve.values.resize(points);
  for (int i = 0; i < points; ++i) {
    const auto block = mel.frames.middleRows(static_cast<Eigen::Index>(i) * kEntropyHopFrames, kEntropyBufferFrames);
    curve.values[i] = trace_entropy(curve.dim, variance_trace(block));
  }
  return curve;
}

/// Lower middle element for even lengths.
inline double lower_median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

inline Thresholds compute_thresholds(const EntropyCurve& curve) {
  if (curve.values.empty()) throw Error(ErrorKind::EmptyCurve, "cannot threshold an empty entropy curve");
  Thresholds th;
  const auto [lo, hi] = std::minmax_element(curve.values.begin(), curve.values.end());
  th.m_min = *lo;
  th.m_max = *hi;
  th.m_med = lower_median(curve.values);
  // Written as interpolations so a flat curve gives t1 = t2 = t3 exactly.
  th.t1 = th.m_med + Thresholds::w1 * (th.m_max - th.m_med);
  th.t2 = th.m_med + (1.0 - Thresholds::w2) * (th.m_max - th.m_med);
  th.t3 = th.m_min + (1.0 - Thresholds::w3) * (th.m_med - th.m_min);
  return th;
}

inline int picking_rate(double h, const Thresholds& th) {
  if (h >= th.t1) return 2;
  if (h >= th.t2) return 3;
  if (h >= th.t3) return 4;
  return 5;
}

/// Curve value governing oversampled frame `pos`: each value holds over the
/// hop it starts, the last one extends to the end.
inline double held_entropy(const EntropyCurve& curve, std::size_t pos) {
  const std::size_t idx = pos / static_cast<std::size_t>(curve.hop_frames);
  return curve.values[std::min(idx, curve.values.size() - 1)];
}

inline PickMask pick_frames(const EntropyCurve& curve, const Thresholds& th, std::size_t n_oversampled) {
  if (curve.values.empty()) throw Error(ErrorKind::EmptyCurve, "cannot pick frames from an empty entropy curve");
  if (n_oversampled < 1) throw Error(ErrorKind::InvalidConfig, "no oversampled frames to pick from");
  PickMask mask;
  mask.bits.assign(n_oversampled, 0);
  mask.bits[0] = 1;
  std::size_t last = 0;
  for (std::size_t p = 1; p < n_oversampled; ++p) {
    const auto rate = static_cast<std::size_t>(picking_rate(held_entropy(curve, p), th));
    if (p - last >= rate) {
      mask.bits[p] = 1;
      last = p;
    }
  }
  return mask;
}

/// c_i = number of picks among oversampled frames 4i..4i+3; a trailing
/// partial group is summed as-is.
inline ConditioningVector conditioning_vector(const PickMask& mask) {
  const std::size_t groups = (mask.size() + kOversampleFactor - 1) / kOversampleFactor;
  ConditioningVector c;
  c.values = VectorXd::Zero(static_cast<Eigen::Index>(groups));
  for (std::size_t p = 0; p < mask.size(); ++p) c.values[static_cast<Eigen::Index>(p / kOversampleFactor)] += mask.bits[p];
  return c;
}

/// Truncates or repeats the final value so the vector has t_frames entries.
inline ConditioningVector align_conditioning(const ConditioningVector& c, Eigen::Index t_frames) {
  if (c.size() < 1) throw Error(ErrorKind::EmptyCurve, "cannot align an empty conditioning vector");
  if (t_frames < 1) throw Error(ErrorKind::InvalidConfig, "alignment target must be at least one frame");
  ConditioningVector out;
  out.values.resize(t_frames);
  const Eigen::Index keep = std::min(c.size(), t_frames);
  out.values.head(keep) = c.values.head(keep);
  if (keep < t_frames) out.values.tail(t_frames - keep).setConstant(c.values[c.size() - 1]);
  return out;
}

struct VfrAnalysis {
  MelSpectrogram mel;
  EntropyCurve curve;
  Thresholds thresholds;
  PickMask mask;
  ConditioningVector conditioning;  // unaligned, one value per 4 oversampled frames
};

inline VfrAnalysis analyze_vfr(const AudioBuffer& audio) {
  VfrAnalysis out;
  out.mel = mel_spectrogram(audio, kVfrFrames, kNumMels);
  out.curve = entropy_curve(out.mel);
  out.thresholds = compute_thresholds(out.curve);
  out.mask = pick_frames(out.curve, out.thresholds, static_cast<std::size_t>(out.mel.num_frames()));
  out.conditioning = conditioning_vector(out.mask);
  return out;
}

struct UtteranceFeatures {
  MfccMatrix feats;
  ConditioningVector conditioning;  // aligned to feats.num_frames()
};

inline UtteranceFeatures analyze_utterance(const AudioBuffer& audio, bool normalize = true) {
  UtteranceFeatures out;
  out.feats = extract_features(audio, normalize);
  out.conditioning = align_conditioning(analyze_vfr(audio).conditioning, out.feats.num_frames());
  return out;
}

}  // namespace vfrpool
