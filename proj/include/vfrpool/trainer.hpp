#pragma once

// Speaker-classification training: chunking, minibatches, cross-entropy and
// Adam. Everything random derives from TrainConfig::seed, so a run is a
// pure function of (seed, config, data).

#include "vfrpool/model_io.hpp"
#include "vfrpool/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace vfrpool {

struct TrainConfig {
  int batch_size = 128;
  int epochs = 20;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  int chunk_len_frames = 200;
  int chunks_per_utterance = 0;  // 0: floor(length / chunk_len), at least 1
  std::uint64_t seed = 0;
};

inline void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::InvalidConfig, why); };
  if (cfg.batch_size < 1) fail("batch_size must be at least 1");
  if (cfg.epochs < 0) fail("epochs must be non-negative");
  if (cfg.chunk_len_frames < kReceptiveField) fail("chunk_len_frames must be at least 15");
  if (cfg.chunks_per_utterance < 0) fail("chunks_per_utterance must be non-negative");
  if (!(cfg.learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) fail("Adam betas must lie in [0, 1)");
  if (!(cfg.epsilon > 0.0)) fail("Adam epsilon must be positive");
}

struct Utterance {
  std::string id;
  MfccMatrix feats;
  ConditioningVector conditioning;  // aligned to feats
  int speaker = 0;
};

struct Dataset {
  std::vector<Utterance> utterances;
  std::vector<std::string> speakers;  // index -> name

  int num_speakers() const { return static_cast<int>(speakers.size()); }
};

inline void validate(const Dataset& data) {
  if (data.utterances.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no utterances");
  std::vector<bool> seen(data.speakers.size(), false);
  for (const auto& u : data.utterances) {
    if (u.speaker < 0 || u.speaker >= data.num_speakers()) {
      throw Error(ErrorKind::LabelOutOfRange, "utterance '" + u.id + "' has speaker index " + std::to_string(u.speaker));
    }
    seen[u.speaker] = true;
    if (u.feats.num_frames() < kReceptiveField) {
      throw Error(ErrorKind::UtteranceTooShort, "utterance '" + u.id + "' has " + std::to_string(u.feats.num_frames()) + " frames");
    }
    if (u.conditioning.size() != u.feats.num_frames()) {
      throw Error(ErrorKind::DimensionMismatch, "utterance '" + u.id + "' conditioning is not aligned to its features");
    }
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(ErrorKind::InvalidConfig, "speaker ids are not dense: some speaker has no utterances");
  }
}

struct Chunk {
  std::size_t utterance = 0;
  int offset = 0;
  int length = 0;
};

using Batch = std::vector<Chunk>;

inline std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  return std::mt19937_64(seq);
}

/// Random fixed-length chunks of every utterance, shuffled and cut into
/// batches. Deterministic in (seed, epoch).
inline std::vector<Batch> make_batches(const Dataset& data, const TrainConfig& cfg, int epoch) {
  if (data.utterances.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no utterances");
  validate(cfg);
  auto rng = epoch_rng(cfg.seed, epoch);
  std::vector<Chunk> chunks;
  for (std::size_t i = 0; i < data.utterances.size(); ++i) {
    const int len = data.utterances[i].feats.num_frames();
    const int chunk_len = std::min(cfg.chunk_len_frames, len);
    const int count = cfg.chunks_per_utterance > 0 ? cfg.chunks_per_utterance : std::max(1, len / cfg.chunk_len_frames);
    std::uniform_int_distribution<int> offset(0, len - chunk_len);
    for (int k = 0; k < count; ++k) chunks.push_back({i, offset(rng), chunk_len});
  }
  std::shuffle(chunks.begin(), chunks.end(), rng);

  std::vector<Batch> batches;
  for (std::size_t start = 0; start < chunks.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
    const std::size_t end = std::min(chunks.size(), start + static_cast<std::size_t>(cfg.batch_size));
    batches.emplace_back(chunks.begin() + static_cast<std::ptrdiff_t>(start), chunks.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

template <typename S>
Mat<S> chunk_features(const Dataset& data, const Chunk& chunk) {
  return data.utterances[chunk.utterance].feats.frames.middleRows(chunk.offset, chunk.length).template cast<S>();
}

template <typename S>
Vec<S> chunk_conditioning(const Dataset& data, const Chunk& chunk) {
  return data.utterances[chunk.utterance].conditioning.values.segment(chunk.offset, chunk.length).template cast<S>();
}

/// -log softmax(logits)[label], via log-sum-exp.
template <typename S>
S cross_entropy(const Vec<S>& logits, int label) {
  if (label < 0 || label >= logits.size()) {
    throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(label) + " for " + std::to_string(logits.size()) + " classes");
  }
  const S top = logits.maxCoeff();
  const S lse = top + std::log((logits.array() - top).exp().sum());
  return lse - logits[label];
}

template <typename S>
struct AdamState {
  std::vector<Mat<S>> m, v;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over a list of tensors sharing the step
/// counter.
template <typename S>
void adam_step(std::span<Mat<S>* const> params, std::span<const Mat<S>* const> grads, AdamState<S>& state,
               const TrainConfig& cfg) {
  if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "parameter and gradient lists differ in length");
  if (state.m.empty()) {
    for (const Mat<S>* p : params) {
      state.m.push_back(Mat<S>::Zero(p->rows(), p->cols()));
      state.v.push_back(Mat<S>::Zero(p->rows(), p->cols()));
    }
  }
  if (state.m.size() != params.size()) throw Error(ErrorKind::ShapeMismatch, "optimizer state does not match parameters");
  ++state.step;
  const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
  const S correction1 = static_cast<S>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const S correction2 = static_cast<S>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<S>& p = *params[i];
    const Mat<S>& g = *grads[i];
    if (g.rows() != p.rows() || g.cols() != p.cols() || state.m[i].rows() != p.rows() || state.m[i].cols() != p.cols()) {
      throw Error(ErrorKind::ShapeMismatch, "gradient " + std::to_string(i) + " does not match its parameter");
    }
    state.m[i] = b1 * state.m[i] + (S(1) - b1) * g;
    state.v[i] = b2 * state.v[i] + (S(1) - b2) * g.cwiseProduct(g);
    p.array() -= lr * (state.m[i].array() / correction1) / ((state.v[i].array() / correction2).sqrt() + eps);
  }
}

template <typename S>
void adam_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state, const TrainConfig& cfg) {
  const auto p = tensors(params);
  const auto g = tensors(grads);
  adam_step<S>(std::span<Mat<S>* const>(p), std::span<const Mat<S>* const>(g), state, cfg);
}

struct EpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
};

struct BatchResult {
  double loss_sum = 0.0;
  int correct = 0;
};

/// Forward/backward over one batch; gradients of the batch-mean loss are
/// summed into `grads` in chunk order.
template <typename S>
BatchResult batch_gradients(const Dataset& data, const Batch& batch, const Model<S>& model, ModelParams<S>& grads) {
  BatchResult r;
  const S scale = S(1) / static_cast<S>(batch.size());
  ForwardCache<S> cache;
  for (const Chunk& chunk : batch) {
    const int label = data.utterances[chunk.utterance].speaker;
    const Vec<S> logits = forward<S>(chunk_features<S>(data, chunk), chunk_conditioning<S>(data, chunk), model, &cache);
    r.loss_sum += static_cast<double>(cross_entropy<S>(logits, label));
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    r.correct += static_cast<int>(best == label);
    accumulate_gradients<S>(cache, label, model, grads, scale);
  }
  return r;
}

struct TrainOptions {
  std::string checkpoint_path;  // empty: no checkpoints
  std::function<void(const EpochLog&)> on_epoch;
};

template <typename S>
struct TrainResult {
  Model<S> model;
  std::vector<EpochLog> log;
};

template <typename S>
TrainResult<S> train(const Dataset& data, const TrainConfig& cfg, Model<S> model, const TrainOptions& options = {}) {
  validate(cfg);
  validate(data);
  if (data.num_speakers() != model.config.n_speakers) {
    throw Error(ErrorKind::InvalidConfig, "dataset has " + std::to_string(data.num_speakers()) + " speakers, model has " +
                                              std::to_string(model.config.n_speakers));
  }
  TrainResult<S> result{std::move(model), {}};
  AdamState<S> adam;
  ModelParams<S> grads = zeros_like(result.model.params);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    int correct = 0, seen = 0;
    for (const Batch& batch : make_batches(data, cfg, epoch)) {
      grads.visit([](std::string_view, Mat<S>& m) { m.setZero(); });
      const BatchResult r = batch_gradients<S>(data, batch, result.model, grads);
      loss_sum += r.loss_sum;
      correct += r.correct;
      seen += static_cast<int>(batch.size());
      adam_step<S>(result.model.params, grads, adam, cfg);
    }
    EpochLog entry{epoch + 1, loss_sum / seen, static_cast<double>(correct) / seen};
    result.log.push_back(entry);
    if (!options.checkpoint_path.empty()) save_model(options.checkpoint_path, result.model);
    if (options.on_epoch) options.on_epoch(entry);
  }
  return result;
}

inline void write_loss_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  os << "epoch,mean_loss,train_accuracy\n" << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : log) os << e.epoch << ',' << e.mean_loss << ',' << e.train_accuracy << '\n';
}

/// Training run description read from a `key = value` file.
struct RunConfig {
  TrainConfig train;
  ModelConfig model;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  std::istringstream is(value);
  T out{};
  is >> out;
  if (!is || !(is >> std::ws).eof()) throw Error(ErrorKind::ParseError, "bad value '" + value + "' for key '" + key + "'");
  return out;
}

}  // namespace detail

/// One `key = value` per line, `#` starts a comment. Unknown keys are errors.
inline RunConfig parse_run_config(std::istream& is) {
  RunConfig rc;
  auto& t = rc.train;
  auto& m = rc.model;
  using detail::parse_number;
  const std::map<std::string, std::function<void(const std::string&, const std::string&)>> setters = {
      {"batch_size", [&](auto& k, auto& v) { t.batch_size = parse_number<int>(k, v); }},
      {"epochs", [&](auto& k, auto& v) { t.epochs = parse_number<int>(k, v); }},
      {"learning_rate", [&](auto& k, auto& v) { t.learning_rate = parse_number<double>(k, v); }},
      {"adam_beta1", [&](auto& k, auto& v) { t.beta1 = parse_number<double>(k, v); }},
      {"adam_beta2", [&](auto& k, auto& v) { t.beta2 = parse_number<double>(k, v); }},
      {"adam_epsilon", [&](auto& k, auto& v) { t.epsilon = parse_number<double>(k, v); }},
      {"chunk_len_frames", [&](auto& k, auto& v) { t.chunk_len_frames = parse_number<int>(k, v); }},
      {"chunks_per_utterance", [&](auto& k, auto& v) { t.chunks_per_utterance = parse_number<int>(k, v); }},
      {"seed", [&](auto& k, auto& v) { t.seed = parse_number<std::uint64_t>(k, v); }},
      {"l1_dim", [&](auto& k, auto& v) { m.layer_dims[0] = parse_number<int>(k, v); }},
      {"l2_dim", [&](auto& k, auto& v) { m.layer_dims[1] = parse_number<int>(k, v); }},
      {"l3_dim", [&](auto& k, auto& v) { m.layer_dims[2] = parse_number<int>(k, v); }},
      {"l4_dim", [&](auto& k, auto& v) { m.layer_dims[3] = parse_number<int>(k, v); }},
      {"l5_dim", [&](auto& k, auto& v) { m.layer_dims[4] = parse_number<int>(k, v); }},
      {"l6_dim", [&](auto& k, auto& v) { m.layer_dims[5] = parse_number<int>(k, v); }},
      {"l7_dim", [&](auto& k, auto& v) { m.layer_dims[6] = parse_number<int>(k, v); }},
      {"attention_dim", [&](auto& k, auto& v) { m.attention_dim = parse_number<int>(k, v); }},
  };
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    it->second(key, value);
  }
  validate(rc.train);
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  return parse_run_config(is);
}

}  // namespace vfrpool
