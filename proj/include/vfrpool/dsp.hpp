#pragma once

// Front end: framing, mel filterbank energies, MFCCs and sliding-window
// cepstral mean normalization.

#include "vfrpool/audio.hpp"
#include "vfrpool/core.hpp"

#include <unsupported/Eigen/FFT>

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

namespace vfrpool {

enum class WindowKind { hamming, rectangular };

struct FrameSpec {
  double frame_len_ms = 25.0;
  double hop_ms = 10.0;
  WindowKind window = WindowKind::hamming;

  int frame_length(int sample_rate_hz) const {
    return static_cast<int>(std::lround(frame_len_ms * sample_rate_hz / 1000.0));
  }
  int hop_length(int sample_rate_hz) const {
    return static_cast<int>(std::lround(hop_ms * sample_rate_hz / 1000.0));
  }
};

inline constexpr FrameSpec kMfccFrames{25.0, 10.0, WindowKind::hamming};
inline constexpr FrameSpec kVfrFrames{25.0, 2.5, WindowKind::hamming};
inline constexpr int kNumMels = 30;
inline constexpr int kNumCeps = 30;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kMelLowHz = 20.0;

struct MelSpectrogram {
  MatrixXd frames;  // N x K, non-negative
  double hop_ms = 10.0;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int num_bands() const { return static_cast<int>(frames.cols()); }
};

struct MfccMatrix {
  MatrixXd frames;  // T x D
  double hop_ms = 10.0;
  bool normalized = false;

  int num_frames() const { return static_cast<int>(frames.rows()); }
  int dim() const { return static_cast<int>(frames.cols()); }
};

inline void validate(const FrameSpec& spec, int sample_rate_hz) {
  if (!(spec.frame_len_ms > 0.0) || !(spec.hop_ms > 0.0) || spec.hop_ms > spec.frame_len_ms) {
    throw Error(ErrorKind::InvalidConfig, "frame spec needs 0 < hop <= frame length");
  }
  if (spec.frame_length(sample_rate_hz) < 1 || spec.hop_length(sample_rate_hz) < 1) {
    throw Error(ErrorKind::InvalidConfig, "frame spec yields an empty frame or hop at this sample rate");
  }
}

inline int num_frames(std::size_t num_samples, int frame_len, int hop) {
  if (num_samples < static_cast<std::size_t>(frame_len)) return 0;
  return static_cast<int>((num_samples - static_cast<std::size_t>(frame_len)) / static_cast<std::size_t>(hop)) + 1;
}

inline VectorXd make_window(WindowKind kind, int length) {
  VectorXd w = VectorXd::Ones(length);
  if (kind == WindowKind::hamming && length > 1) {
    for (int n = 0; n < length; ++n) {
      w[n] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (length - 1));
    }
  }
  return w;
}

/// Frame i covers samples [i*hop, i*hop + len); the trailing partial frame
/// is dropped. Rows are windowed frames.
inline MatrixXd frame_signal(const AudioBuffer& audio, const FrameSpec& spec) {
  validate(audio);
  validate(spec, audio.sample_rate_hz);
  const int len = spec.frame_length(audio.sample_rate_hz);
  const int hop = spec.hop_length(audio.sample_rate_hz);
  const int n = num_frames(audio.size(), len, hop);
  if (n < 1) {
    throw Error(ErrorKind::AudioTooShort, std::to_string(audio.size()) + " samples is shorter than one " +
                                              std::to_string(len) + "-sample frame");
  }
  const VectorXd window = make_window(spec.window, len);
  MatrixXd frames(n, len);
  for (int i = 0; i < n; ++i) {
    const double* src = audio.samples.data() + static_cast<std::size_t>(i) * hop;
    for (int j = 0; j < len; ++j) frames(i, j) = src[j] * window[j];
  }
  return frames;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Center frequencies (Hz) of the triangular filters: n_mels + 2 points evenly
/// spaced on the mel scale between 20 Hz and Nyquist, endpoints excluded.
inline std::vector<double> mel_center_frequencies(int n_mels, int sample_rate_hz) {
  const double lo = hz_to_mel(kMelLowHz);
  const double hi = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> centers(n_mels);
  for (int m = 0; m < n_mels; ++m) centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  return centers;
}

/// n_mels x (n_fft/2 + 1) matrix of triangular weights, peak 1 at each center.
inline MatrixXd mel_filterbank(int n_mels, int n_fft, int sample_rate_hz) {
  const int n_bins = n_fft / 2 + 1;
  const double lo = hz_to_mel(kMelLowHz);
  const double hi = hz_to_mel(sample_rate_hz / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int m = 0; m < n_mels + 2; ++m) edges[m] = mel_to_hz(lo + (hi - lo) * m / (n_mels + 1));

  MatrixXd fb = MatrixXd::Zero(n_mels, n_bins);
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (int k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate_hz / n_fft;
      if (f > left && f < center) {
        fb(m, k) = (f - left) / (center - left);
      } else if (f >= center && f < right) {
        fb(m, k) = (right - f) / (right - center);
      }
    }
  }
  return fb;
}

/// Power spectrum of each windowed frame (zero-padded to the next power of
/// two) projected onto the mel filterbank.
inline MelSpectrogram mel_spectrogram(const AudioBuffer& audio, const FrameSpec& spec, int n_mels = kNumMels) {
  if (n_mels < 2) throw Error(ErrorKind::InvalidConfig, "n_mels must be at least 2");
  const MatrixXd frames = frame_signal(audio, spec);
  const int len = static_cast<int>(frames.cols());
  const int n_fft = next_pow2(len);
  const int n_bins = n_fft / 2 + 1;
  const MatrixXd fb = mel_filterbank(n_mels, n_fft, audio.sample_rate_hz);

  Eigen::FFT<double> fft;
  std::vector<double> buf(n_fft, 0.0);
  std::vector<std::complex<double>> spectrum;
  MatrixXd power(frames.rows(), n_bins);
  for (Eigen::Index i = 0; i < frames.rows(); ++i) {
    for (int j = 0; j < len; ++j) buf[j] = frames(i, j);
    fft.fwd(spectrum, buf);
    for (int k = 0; k < n_bins; ++k) power(i, k) = std::norm(spectrum[k]);
  }

  MelSpectrogram mel;
  mel.frames = (power * fb.transpose()).cwiseMax(0.0);
  mel.hop_ms = spec.hop_ms;
  return mel;
}

/// Orthonormal type-II DCT basis, n_coeffs x n_in.
inline MatrixXd dct2_matrix(int n_coeffs, int n_in) {
  MatrixXd d(n_coeffs, n_in);
  for (int n = 0; n < n_coeffs; ++n) {
    const double scale = std::sqrt((n == 0 ? 1.0 : 2.0) / n_in);
    for (int k = 0; k < n_in; ++k) d(n, k) = scale * std::cos(std::numbers::pi * n * (k + 0.5) / n_in);
  }
  return d;
}

inline MfccMatrix mfcc(const MelSpectrogram& mel, int n_coeffs = kNumCeps) {
  if (n_coeffs < 1 || n_coeffs > mel.num_bands()) {
    throw Error(ErrorKind::DimensionMismatch, "cannot take " + std::to_string(n_coeffs) + " coefficients from " +
                                                  std::to_string(mel.num_bands()) + " mel bands");
  }
  if (mel.num_frames() < 1) throw Error(ErrorKind::AudioTooShort, "mel spectrogram has no frames");
  const MatrixXd log_energy = mel.frames.cwiseMax(kLogFloor).array().log().matrix();
  MfccMatrix out;
  out.frames = log_energy * dct2_matrix(n_coeffs, mel.num_bands()).transpose();
  out.hop_ms = mel.hop_ms;
  return out;
}

/// Subtracts from each frame the mean over a centered window of +-window_s/2.
/// Near the edges the window slides inward to keep its length; utterances
/// shorter than the window use every frame.
inline MfccMatrix sliding_mean_normalize(const MfccMatrix& feats, double window_s = 3.0) {
  if (!(window_s > 0.0)) throw Error(ErrorKind::InvalidConfig, "normalization window must be positive");
  const int t_frames = feats.num_frames();
  const int half = static_cast<int>(std::lround(window_s * 1000.0 / feats.hop_ms / 2.0));
  const int width = 2 * half + 1;

  MatrixXd prefix = MatrixXd::Zero(t_frames + 1, feats.dim());
  for (int t = 0; t < t_frames; ++t) prefix.row(t + 1) = prefix.row(t) + feats.frames.row(t);

  MfccMatrix out = feats;
  for (int t = 0; t < t_frames; ++t) {
    int begin = 0, end = t_frames;
    if (t_frames > width) {
      begin = std::clamp(t - half, 0, t_frames - width);
      end = begin + width;
    }
    out.frames.row(t) -= (prefix.row(end) - prefix.row(begin)) / static_cast<double>(end - begin);
  }
  out.normalized = true;
  return out;
}

/// Network input: 25 ms / 10 ms MFCCs, optionally mean normalized.
inline MfccMatrix extract_features(const AudioBuffer& audio, bool normalize = true) {
  MfccMatrix feats = mfcc(mel_spectrogram(audio, kMfccFrames, kNumMels), kNumCeps);
  return normalize ? sliding_mean_normalize(feats) : feats;
}

}  // namespace vfrpool
