#pragma once

// Synthetic speakers for desk-scale experiments.
//
// A speaker is a 30-dim diagonal Gaussian over cepstral-like vectors. Each
// 10 ms parameter frame x_t is mapped to per-band log energies with the
// inverse DCT and rendered as a bank of phase-continuous sinusoids at the
// mel band centers, so the front end recovers an affine image of x_t. The
// parameter trajectory is smooth between random knots; the "slow" style
// plays the trajectory at half speed by repeating every frame twice.

#include "vfrpool/dsp.hpp"
#include "vfrpool/eval.hpp"
#include "vfrpool/trainer.hpp"
#include "vfrpool/vfr.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <numbers>
#include <random>
#include <string>
#include <vector>

namespace vfrpool {

enum class Style { fast, slow };

constexpr const char* style_name(Style s) { return s == Style::fast ? "fast" : "slow"; }

struct SpeakerProfile {
  VectorXd mean;    // in [-1, 1]^30
  VectorXd stddev;  // diagonal of the covariance, square-rooted
};

struct SynthUtterance {
  std::string id;
  int speaker = 0;
  Style style = Style::fast;
  AudioBuffer audio;
};

struct SynthCorpus {
  std::vector<std::string> speaker_names;
  std::vector<SpeakerProfile> speakers;
  std::vector<SynthUtterance> train;
  std::vector<SynthUtterance> heldout;
};

struct SynthConfig {
  int n_speakers = 2;
  int utts_per_speaker = 1;
  int frames_per_utt = 500;
  int heldout_per_speaker = 0;
  std::uint64_t seed = 0;
  int sample_rate_hz = 16000;
};

inline constexpr double kSynthAmplitude = 0.02;
inline constexpr double kSynthNoiseFloor = 1e-3;
inline constexpr double kSynthPeak = 0.9;

inline std::mt19937_64 derived_rng(std::uint64_t seed, std::uint32_t a, std::uint32_t b, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), a, b, tag};
  return std::mt19937_64(seq);
}

inline SpeakerProfile random_speaker(std::mt19937_64& rng, int dim = kNumCeps) {
  std::uniform_real_distribution<double> mean(-1.0, 1.0), spread(0.2, 1.0);
  SpeakerProfile p{VectorXd(dim), VectorXd(dim)};
  for (int i = 0; i < dim; ++i) p.mean[i] = mean(rng);
  for (int i = 0; i < dim; ++i) p.stddev[i] = spread(rng);
  return p;
}

inline constexpr int kKnotSpacing = 5;  // frames between independent draws

/// Smooth trajectory through independent N(mean, stddev^2) knots spaced
/// kKnotSpacing frames apart, raised-cosine interpolated.
inline MatrixXd draw_trajectory(const SpeakerProfile& spk, int frames, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  const int dim = static_cast<int>(spk.mean.size());
  const int knots = frames / kKnotSpacing + 2;
  MatrixXd k(knots, dim);
  for (int j = 0; j < knots; ++j) {
    for (int i = 0; i < dim; ++i) k(j, i) = spk.mean[i] + spk.stddev[i] * normal(rng);
  }
  MatrixXd x(frames, dim);
  for (int t = 0; t < frames; ++t) {
    const int j = t / kKnotSpacing;
    const double phase = static_cast<double>(t % kKnotSpacing) / kKnotSpacing;
    const double w = 0.5 - 0.5 * std::cos(std::numbers::pi * phase);
    x.row(t) = (1.0 - w) * k.row(j) + w * k.row(j + 1);
  }
  return x;
}

/// T x 30 parameter frames. The slow style takes the first half of a
/// trajectory and repeats every frame twice.
inline MatrixXd draw_parameter_frames(const SpeakerProfile& spk, Style style, int frames, std::mt19937_64& rng) {
  if (style == Style::fast) return draw_trajectory(spk, frames, rng);
  const MatrixXd base = draw_trajectory(spk, (frames + 1) / 2, rng);
  MatrixXd x(frames, base.cols());
  for (int t = 0; t < frames; ++t) x.row(t) = base.row(t / 2);
  return x;
}

/// Renders parameter frames to audio long enough for exactly T MFCC frames.
inline AudioBuffer render_frames(const MatrixXd& x, int sample_rate_hz, std::mt19937_64& rng) {
  const int frames = static_cast<int>(x.rows());
  const int dim = static_cast<int>(x.cols());
  const int len = kMfccFrames.frame_length(sample_rate_hz);
  const int hop = kMfccFrames.hop_length(sample_rate_hz);
  const std::size_t n = static_cast<std::size_t>(len) + static_cast<std::size_t>(frames - 1) * hop;

  // Per-band amplitudes at each frame center: energy tracks exp(IDCT(x)).
  const MatrixXd log_energy = x * dct2_matrix(dim, dim);
  const MatrixXd amp = (kSynthAmplitude * (0.5 * log_energy.array()).exp()).matrix();
  const std::vector<double> centers = mel_center_frequencies(dim, sample_rate_hz);

  std::uniform_real_distribution<double> phase0(0.0, 2.0 * std::numbers::pi);
  std::vector<double> phase(dim), step(dim);
  for (int k = 0; k < dim; ++k) {
    phase[k] = phase0(rng);
    step[k] = 2.0 * std::numbers::pi * centers[k] / sample_rate_hz;
  }
  std::normal_distribution<double> noise(0.0, kSynthNoiseFloor);

  AudioBuffer audio;
  audio.sample_rate_hz = sample_rate_hz;
  audio.samples.resize(n);
  const double first_center = len / 2.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double pos = std::clamp((static_cast<double>(i) - first_center) / hop, 0.0, static_cast<double>(frames - 1));
    const int f0 = static_cast<int>(pos);
    const int f1 = std::min(f0 + 1, frames - 1);
    const double w = pos - f0;
    double s = 0.0;
    for (int k = 0; k < dim; ++k) {
      s += ((1.0 - w) * amp(f0, k) + w * amp(f1, k)) * std::sin(phase[k]);
      phase[k] += step[k];
    }
    audio.samples[i] = s + noise(rng);
  }

  double peak = 0.0;
  for (double s : audio.samples) peak = std::max(peak, std::abs(s));
  if (peak > kSynthPeak) {
    for (double& s : audio.samples) s *= kSynthPeak / peak;
  }
  return audio;
}

inline SynthUtterance synth_utterance(const SynthConfig& cfg, const SpeakerProfile& spk, int speaker, int index,
                                      Style style, bool heldout) {
  auto rng = derived_rng(cfg.seed, static_cast<std::uint32_t>(speaker), static_cast<std::uint32_t>(index),
                         heldout ? 2u : 1u);
  const MatrixXd x = draw_parameter_frames(spk, style, cfg.frames_per_utt, rng);
  char id[64];
  std::snprintf(id, sizeof id, "spk%03d_%s%03d_%s", speaker, heldout ? "h" : "u", index, style_name(style));
  return {id, speaker, style, render_frames(x, cfg.sample_rate_hz, rng)};
}

/// Speakers and their utterances; styles alternate fast/slow per speaker.
inline SynthCorpus synth_corpus(const SynthConfig& cfg) {
  if (cfg.n_speakers < 1 || cfg.utts_per_speaker < 1 || cfg.frames_per_utt < 1 || cfg.heldout_per_speaker < 0) {
    throw Error(ErrorKind::InvalidConfig, "synthetic corpus needs at least one speaker, utterance and frame");
  }
  SynthCorpus corpus;
  auto rng = derived_rng(cfg.seed, 0xffffffffu, 0, 0);
  for (int s = 0; s < cfg.n_speakers; ++s) {
    char name[16];
    std::snprintf(name, sizeof name, "spk%03d", s);
    corpus.speaker_names.emplace_back(name);
    corpus.speakers.push_back(random_speaker(rng));
  }
  for (int s = 0; s < cfg.n_speakers; ++s) {
    for (int u = 0; u < cfg.utts_per_speaker; ++u) {
      corpus.train.push_back(synth_utterance(cfg, corpus.speakers[s], s, u, u % 2 ? Style::slow : Style::fast, false));
    }
    for (int u = 0; u < cfg.heldout_per_speaker; ++u) {
      corpus.heldout.push_back(synth_utterance(cfg, corpus.speakers[s], s, u, u % 2 ? Style::slow : Style::fast, true));
    }
  }
  return corpus;
}

inline Utterance to_training_utterance(const SynthUtterance& u, bool normalize) {
  UtteranceFeatures f = analyze_utterance(u.audio, normalize);
  return {u.id, std::move(f.feats), std::move(f.conditioning), u.speaker};
}

inline Dataset to_dataset(const SynthCorpus& corpus, bool normalize = true) {
  Dataset data;
  data.speakers = corpus.speaker_names;
  for (const auto& u : corpus.train) data.utterances.push_back(to_training_utterance(u, normalize));
  return data;
}

inline Dataset synth_dataset(int n_speakers, int utts_per_speaker, int frames_per_utt, std::uint64_t seed,
                             bool normalize = true) {
  SynthConfig cfg;
  cfg.n_speakers = n_speakers;
  cfg.utts_per_speaker = utts_per_speaker;
  cfg.frames_per_utt = frames_per_utt;
  cfg.seed = seed;
  return to_dataset(synth_corpus(cfg), normalize);
}

/// Balanced random trials over `utts`: half same-speaker pairs, half
/// different-speaker pairs, never pairing an utterance with itself.
inline TrialList make_trials(const std::vector<SynthUtterance>& utts, int n_trials, std::uint64_t seed) {
  if (utts.size() < 2) throw Error(ErrorKind::DegenerateTrials, "need at least two utterances to form trials");
  auto rng = derived_rng(seed, 0x7a1a1u, 0, 3);
  std::uniform_int_distribution<std::size_t> pick(0, utts.size() - 1);
  TrialList trials;
  int attempts = 0;
  while (static_cast<int>(trials.size()) < n_trials) {
    if (++attempts > 1000 * n_trials + 1000) throw Error(ErrorKind::DegenerateTrials, "cannot form the requested trials");
    const bool want_target = trials.size() % 2 == 0;
    const std::size_t a = pick(rng), b = pick(rng);
    if (a == b || (utts[a].speaker == utts[b].speaker) != want_target) continue;
    trials.push_back({utts[a].id, utts[b].id, want_target});
  }
  return trials;
}

}  // namespace vfrpool
