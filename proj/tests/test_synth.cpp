#include "test_util.hpp"

#include <set>

using namespace vfrpool;
using testutil::error_kind_of;

namespace {

// Mean over 12-frame buffers (hop 6) of the log of the summed per-band
// variance of the mel spectrum.
double mean_log_variance(const AudioBuffer& audio) {
  const MelSpectrogram mel = mel_spectrogram(audio, kVfrFrames, kNumMels);
  const MatrixXd& m = mel.frames;
  double total = 0.0;
  int buffers = 0;
  for (int start = 0; start + 12 <= m.rows(); start += 6) {
    double trace = 0.0;
    for (int k = 0; k < m.cols(); ++k) {
      double mean = 0.0;
      for (int t = start; t < start + 12; ++t) mean += m(t, k) / 12.0;
      for (int t = start; t < start + 12; ++t) trace += (m(t, k) - mean) * (m(t, k) - mean) / 12.0;
    }
    total += std::log(std::max(trace, 1e-10));
    ++buffers;
  }
  return total / buffers;
}

}  // namespace

TEST(Synth, SizesAndLabels) {
  const Dataset d = synth_dataset(2, 1, 120, 5);
  ASSERT_EQ(d.utterances.size(), 2u);
  EXPECT_EQ(d.num_speakers(), 2);
  EXPECT_EQ(d.utterances[0].speaker, 0);
  EXPECT_EQ(d.utterances[1].speaker, 1);
  for (const auto& u : d.utterances) {
    EXPECT_EQ(u.feats.num_frames(), 120);
    EXPECT_EQ(u.feats.dim(), 30);
    EXPECT_EQ(u.conditioning.size(), 120);
    EXPECT_GE(u.conditioning.values.minCoeff(), 0.0);
    EXPECT_LE(u.conditioning.values.maxCoeff(), 4.0);
  }
  EXPECT_NO_THROW(validate(d));
}

TEST(Synth, CorpusLayout) {
  SynthConfig cfg;
  cfg.n_speakers = 3;
  cfg.utts_per_speaker = 4;
  cfg.heldout_per_speaker = 2;
  cfg.frames_per_utt = 60;
  cfg.seed = 9;
  const SynthCorpus c = synth_corpus(cfg);
  EXPECT_EQ(c.speaker_names, (std::vector<std::string>{"spk000", "spk001", "spk002"}));
  ASSERT_EQ(c.train.size(), 12u);
  ASSERT_EQ(c.heldout.size(), 6u);
  int slow = 0;
  std::set<std::string> ids;
  for (const auto& u : c.train) {
    slow += u.style == Style::slow;
    ids.insert(u.id);
    // exactly enough samples for the requested number of 10 ms frames
    EXPECT_EQ(u.audio.samples.size(), 400u + 59u * 160u);
    EXPECT_EQ(u.audio.sample_rate_hz, 16000);
    for (double s : u.audio.samples) ASSERT_LE(std::abs(s), 1.0);
  }
  for (const auto& u : c.heldout) ids.insert(u.id);
  EXPECT_EQ(slow, 6);
  EXPECT_EQ(ids.size(), 18u);
}

TEST(Synth, Deterministic) {
  const Dataset a = synth_dataset(2, 2, 80, 11);
  const Dataset b = synth_dataset(2, 2, 80, 11);
  const Dataset c = synth_dataset(2, 2, 80, 12);
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    EXPECT_EQ(a.utterances[i].feats.frames, b.utterances[i].feats.frames);
    EXPECT_EQ(a.utterances[i].conditioning.values, b.utterances[i].conditioning.values);
    EXPECT_EQ(a.utterances[i].id, b.utterances[i].id);
  }
  EXPECT_NE(a.utterances[0].feats.frames, c.utterances[0].feats.frames);
}

TEST(Synth, SlowStyleRepeatsFrames) {
  std::mt19937_64 rng(1);
  const SpeakerProfile spk = random_speaker(rng);
  const MatrixXd x = draw_parameter_frames(spk, Style::slow, 41, rng);
  ASSERT_EQ(x.rows(), 41);
  for (int t = 0; t + 1 < 41; t += 2) EXPECT_EQ(x.row(t), x.row(t + 1));
  const MatrixXd f = draw_parameter_frames(spk, Style::fast, 41, rng);
  int repeats = 0;
  for (int t = 0; t + 1 < 41; t += 2) repeats += f.row(t) == f.row(t + 1);
  EXPECT_EQ(repeats, 0);
}

TEST(Synth, TrajectoryPassesThroughKnots) {
  std::mt19937_64 rng(2);
  const SpeakerProfile spk = random_speaker(rng, 4);
  auto copy = rng;
  const MatrixXd x = draw_trajectory(spk, 23, rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int j = 0; j < 23 / kKnotSpacing + 2; ++j) {
    VectorXd knot(4);
    for (int i = 0; i < 4; ++i) knot[i] = spk.mean[i] + spk.stddev[i] * normal(copy);
    if (j * kKnotSpacing < 23) {
      EXPECT_LT((x.row(j * kKnotSpacing).transpose() - knot).cwiseAbs().maxCoeff(), 1e-12) << j;
    }
  }
}

TEST(Synth, SlowStyleHasLowerEntropy) {
  SynthConfig cfg;
  cfg.n_speakers = 6;
  cfg.utts_per_speaker = 2;
  cfg.frames_per_utt = 300;
  cfg.seed = 21;
  const SynthCorpus c = synth_corpus(cfg);
  double fast = 0.0, slow = 0.0;
  int slower_within_speaker = 0;
  for (int s = 0; s < cfg.n_speakers; ++s) {
    const double f = mean_log_variance(c.train[2 * s].audio);
    const double w = mean_log_variance(c.train[2 * s + 1].audio);
    ASSERT_EQ(c.train[2 * s].style, Style::fast);
    ASSERT_EQ(c.train[2 * s + 1].style, Style::slow);
    fast += f;
    slow += w;
    slower_within_speaker += w < f;
    // the library's curve agrees with the naive one up to its constant offset
    const EntropyCurve curve = analyze_vfr(c.train[2 * s].audio).curve;
    double lib = 0.0;
    for (double h : curve.values) lib += h / static_cast<double>(curve.size());
    EXPECT_NEAR(lib - 30.0 * std::log(std::sqrt(2.0 * std::numbers::pi)), f, 1e-6);
  }
  EXPECT_LT(slow, fast);
  EXPECT_GE(slower_within_speaker, 5);
}

TEST(Synth, SpeakersAreSeparableByMeanFeatures) {
  const Dataset d = synth_dataset(4, 2, 200, 31, false);
  std::vector<VectorXd> means;
  for (const auto& u : d.utterances) means.push_back(u.feats.frames.colwise().mean().transpose());
  for (std::size_t i = 0; i < means.size(); ++i) {
    std::size_t nearest = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < means.size(); ++j) {
      if (j != i && (means[j] - means[i]).norm() < (means[nearest] - means[i]).norm()) nearest = j;
    }
    EXPECT_EQ(d.utterances[nearest].speaker, d.utterances[i].speaker) << d.utterances[i].id;
  }
}

TEST(Synth, Trials) {
  SynthConfig cfg;
  cfg.n_speakers = 3;
  cfg.heldout_per_speaker = 2;
  cfg.frames_per_utt = 40;
  const SynthCorpus c = synth_corpus(cfg);
  const TrialList trials = make_trials(c.heldout, 20, 4);
  ASSERT_EQ(trials.size(), 20u);
  int targets = 0;
  for (const auto& t : trials) {
    EXPECT_NE(t.enroll_id, t.test_id);
    EXPECT_EQ(t.enroll_id.substr(0, 6) == t.test_id.substr(0, 6), t.is_target);
    targets += t.is_target;
  }
  EXPECT_EQ(targets, 10);
  const TrialList again = make_trials(c.heldout, 20, 4);
  for (std::size_t i = 0; i < trials.size(); ++i) EXPECT_EQ(trials[i].test_id, again[i].test_id);
}

TEST(Synth, Errors) {
  EXPECT_EQ(error_kind_of([] { synth_dataset(0, 1, 100, 1); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(error_kind_of([] { synth_dataset(1, 0, 100, 1); }), ErrorKind::InvalidConfig);
  SynthConfig cfg;
  cfg.n_speakers = 1;
  cfg.heldout_per_speaker = 1;
  cfg.frames_per_utt = 40;
  const SynthCorpus c = synth_corpus(cfg);
  EXPECT_EQ(error_kind_of([&] { make_trials(c.heldout, 4, 1); }), ErrorKind::DegenerateTrials);
  cfg.heldout_per_speaker = 2;
  const SynthCorpus one_speaker = synth_corpus(cfg);
  EXPECT_EQ(error_kind_of([&] { make_trials(one_speaker.heldout, 4, 1); }), ErrorKind::DegenerateTrials);
}
