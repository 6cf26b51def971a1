#pragma once

// x-vector style TDNN with conditioned attentive pooling.
//
//   l1..l5  frame level, valid (unpadded) spliced affine + ReLU
//   pool    conditioned self-attentive statistics pooling -> [mu || sigma]
//   l6      affine (embedding tap) + ReLU
//   l7      affine + ReLU
//   output  affine -> speaker logits

#include "vfrpool/dsp.hpp"
#include "vfrpool/pooling.hpp"
#include "vfrpool/vfr.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace vfrpool {

struct ModelConfig {
  int input_dim = kNumCeps;
  std::array<int, 7> layer_dims{512, 512, 512, 512, 1500, 512, 512};
  int attention_dim = 500;
  std::array<std::vector<int>, 5> contexts{{{-2, -1, 0, 1, 2}, {-2, 0, 2}, {-3, 0, 3}, {0}, {0}}};
  int n_speakers = 0;
  Variant variant = Variant::none;
  std::uint64_t seed = 0;

  int left_context() const {
    int total = 0;
    for (const auto& ctx : contexts) total -= ctx.front();
    return total;
  }
  int right_context() const {
    int total = 0;
    for (const auto& ctx : contexts) total += ctx.back();
    return total;
  }
  int receptive_field() const { return left_context() + right_context() + 1; }
  int pool_dim() const { return layer_dims[4]; }
  int embedding_dim() const { return layer_dims[5]; }
};

inline constexpr int kReceptiveField = 15;

inline void validate(const ModelConfig& cfg) {
  auto fail = [](const std::string& why) { throw Error(ErrorKind::InvalidConfig, why); };
  if (cfg.input_dim <= 0 || cfg.attention_dim <= 0) fail("dimensions must be positive");
  for (int d : cfg.layer_dims) {
    if (d <= 0) fail("layer dimensions must be positive");
  }
  if (cfg.n_speakers <= 0) fail("n_speakers must be at least 1");
  for (const auto& ctx : cfg.contexts) {
    if (ctx.empty()) fail("every frame layer needs at least one context offset");
    for (std::size_t i = 1; i < ctx.size(); ++i) {
      if (ctx[i] <= ctx[i - 1]) fail("context offsets must be strictly increasing");
    }
    if (ctx.front() > 0 || ctx.back() < 0) fail("context offsets must include the current frame's span");
  }
  if (cfg.receptive_field() != kReceptiveField) {
    fail("receptive field is " + std::to_string(cfg.receptive_field()) + " frames, expected 15");
  }
}

template <typename S>
struct AffineParams {
  Mat<S> w;  // out x in
  Mat<S> b;  // out x 1
};

template <typename S>
struct ModelParams {
  std::array<AffineParams<S>, 5> frame;
  PoolingParams<S> pooling;
  AffineParams<S> l6, l7, output;

  /// Visits every tensor in declaration order; this order is the on-disk
  /// order of the model file.
  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    static constexpr const char* kFrameNames[5][2] = {
        {"l1.w", "l1.b"}, {"l2.w", "l2.b"}, {"l3.w", "l3.b"}, {"l4.w", "l4.b"}, {"l5.w", "l5.b"}};
    for (int i = 0; i < 5; ++i) {
      f(kFrameNames[i][0], self.frame[i].w);
      f(kFrameNames[i][1], self.frame[i].b);
    }
    self.pooling.visit(f);
    f("l6.w", self.l6.w);
    f("l6.b", self.l6.b);
    f("l7.w", self.l7.w);
    f("l7.b", self.l7.b);
    f("output.w", self.output.w);
    f("output.b", self.output.b);
  }
};

template <typename S>
struct Model {
  ModelConfig config;
  ModelParams<S> params;
};

template <typename S>
std::vector<Mat<S>*> tensors(ModelParams<S>& p) {
  std::vector<Mat<S>*> out;
  p.visit([&](std::string_view, Mat<S>& m) { out.push_back(&m); });
  return out;
}

template <typename S>
std::vector<const Mat<S>*> tensors(const ModelParams<S>& p) {
  std::vector<const Mat<S>*> out;
  p.visit([&](std::string_view, const Mat<S>& m) { out.push_back(&m); });
  return out;
}

inline bool is_bias_name(std::string_view name) {
  const auto dot = name.rfind('.');
  return dot != std::string_view::npos && dot + 1 < name.size() && name[dot + 1] == 'b';
}

/// All-zero parameters with the shapes implied by `cfg`.
template <typename S>
ModelParams<S> zero_params(const ModelConfig& cfg) {
  ModelParams<S> p;
  int in = cfg.input_dim;
  for (int i = 0; i < 5; ++i) {
    const int spliced = in * static_cast<int>(cfg.contexts[i].size());
    p.frame[i].w = Mat<S>::Zero(cfg.layer_dims[i], spliced);
    p.frame[i].b = Mat<S>::Zero(cfg.layer_dims[i], 1);
    in = cfg.layer_dims[i];
  }
  p.pooling = make_pooling_params<S>(cfg.variant, cfg.pool_dim(), cfg.attention_dim);
  p.l6 = {Mat<S>::Zero(cfg.layer_dims[5], 2 * cfg.pool_dim()), Mat<S>::Zero(cfg.layer_dims[5], 1)};
  p.l7 = {Mat<S>::Zero(cfg.layer_dims[6], cfg.layer_dims[5]), Mat<S>::Zero(cfg.layer_dims[6], 1)};
  p.output = {Mat<S>::Zero(cfg.n_speakers, cfg.layer_dims[6]), Mat<S>::Zero(cfg.n_speakers, 1)};
  return p;
}

template <typename S>
ModelParams<S> zeros_like(const ModelParams<S>& p) {
  ModelParams<S> z = p;
  z.visit([](std::string_view, Mat<S>& m) { m.setZero(); });
  return z;
}

/// Glorot-uniform weights, zero biases. Deterministic in `seed`; values are
/// drawn in double so float and double models start identically.
template <typename S>
Model<S> init_model(ModelConfig config, std::uint64_t seed) {
  validate(config);
  config.seed = seed;
  Model<S> model{config, zero_params<S>(config)};
  std::mt19937_64 rng(seed);
  model.params.visit([&](std::string_view name, Mat<S>& m) {
    if (is_bias_name(name)) return;
    const double bound = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = static_cast<S>(dist(rng));
    }
  });
  return model;
}

template <typename S>
struct ForwardCache {
  std::array<Mat<S>, 5> spliced;
  std::array<Mat<S>, 5> pre;
  std::array<Mat<S>, 5> act;
  PoolingCache<S> pool;
  Vec<S> stats;  // [mu || sigma]
  Vec<S> z6, a6, z7, a7, logits;
};

/// Stacks the rows at each context offset side by side; output frame j
/// is centered on input frame j - offsets.front().
template <typename S>
Mat<S> splice(const Mat<S>& in, const std::vector<int>& offsets) {
  const int span = offsets.back() - offsets.front();
  const Eigen::Index out_rows = in.rows() - span;
  Mat<S> out(out_rows, in.cols() * static_cast<Eigen::Index>(offsets.size()));
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    out.middleCols(static_cast<Eigen::Index>(k) * in.cols(), in.cols()) =
        in.middleRows(offsets[k] - offsets.front(), out_rows);
  }
  return out;
}

template <typename S>
Mat<S> relu(const Mat<S>& z) {
  return z.cwiseMax(S(0));
}

template <typename S, typename Derived>
auto relu_mask(const Eigen::MatrixBase<Derived>& z) {
  return (z.array() > S(0)).template cast<S>().matrix();
}

inline int pooled_frame_count(const ModelConfig& cfg, int t_frames) { return t_frames - cfg.receptive_field() + 1; }

/// Conditioning values at the centers of the pooled frames. Accepts either a
/// per-input-frame vector (length T) or one already cut to the pooled range.
template <typename S>
Vec<S> pooled_conditioning(const ModelConfig& cfg, const Vec<S>& c, int t_frames) {
  const int pooled = pooled_frame_count(cfg, t_frames);
  if (c.size() == t_frames) return c.segment(cfg.left_context(), pooled);
  if (c.size() == pooled) return c;
  throw Error(ErrorKind::DimensionMismatch, "conditioning length " + std::to_string(c.size()) + " fits neither " +
                                                std::to_string(t_frames) + " input nor " + std::to_string(pooled) +
                                                " pooled frames");
}

/// x * w^T + b with every output element computed by the same chain of
/// fused multiply-adds over the input dimension, whatever the frame's row
/// position or the number of frames. Frame-level outputs are therefore
/// bit-identical under a time shift, which a blocked GEMM does not promise.
template <typename S>
Mat<S> frame_affine(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b) {
  namespace ei = Eigen::internal;
  using P = typename ei::packet_traits<S>::type;
  using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  constexpr Eigen::Index kP = ei::packet_traits<S>::size;
  constexpr Eigen::Index kT = 6;  // frames per register block
  const Eigen::Index t_frames = x.rows(), in = x.cols(), out_dim = w.rows();
  const Eigen::Index padded = (out_dim + kP - 1) / kP * kP;

  const RowMat xr = x;
  RowMat wt = RowMat::Zero(in, padded);
  wt.leftCols(out_dim) = w.transpose();
  RowMat out(t_frames, padded);
  RowMat slice;

  auto run = [&]<int NP, Eigen::Index NT>(Eigen::Index t0, Eigen::Index o0) {
    P acc[NT][NP];
    for (auto& row : acc) {
      for (auto& a : row) a = ei::pset1<P>(S(0));
    }
    for (Eigen::Index k = 0; k < in; ++k) {
      const S* wk = slice.data() + k * NP * kP;
      P wp[NP];
      for (int j = 0; j < NP; ++j) wp[j] = ei::ploadu<P>(wk + j * kP);
      for (Eigen::Index tt = 0; tt < NT; ++tt) {
        const P s = ei::pset1<P>(xr(t0 + tt, k));
        for (int j = 0; j < NP; ++j) acc[tt][j] = ei::pmadd(s, wp[j], acc[tt][j]);
      }
    }
    for (Eigen::Index tt = 0; tt < NT; ++tt) {
      for (int j = 0; j < NP; ++j) ei::pstoreu(&out(t0 + tt, o0 + j * kP), acc[tt][j]);
    }
  };
  auto sweep = [&]<int NP>(Eigen::Index o0) {
    slice = wt.middleCols(o0, NP * kP);
    Eigen::Index t0 = 0;
    for (; t0 + kT <= t_frames; t0 += kT) run.template operator()<NP, kT>(t0, o0);
    for (; t0 < t_frames; ++t0) run.template operator()<NP, 1>(t0, o0);
  };
  Eigen::Index o0 = 0;
  for (; o0 + 3 * kP <= padded; o0 += 3 * kP) sweep.template operator()<3>(o0);
  for (; o0 < padded; o0 += kP) sweep.template operator()<1>(o0);

  Mat<S> result = out.leftCols(out_dim);
  result.rowwise() += b.col(0).transpose();
  return result;
}

template <typename S>
Vec<S> forward(const Mat<S>& x, const Vec<S>& c, const Model<S>& model, ForwardCache<S>* cache = nullptr) {
  const ModelConfig& cfg = model.config;
  const auto& p = model.params;
  const int t = static_cast<int>(x.rows());
  if (t < cfg.receptive_field()) {
    throw Error(ErrorKind::UtteranceTooShort,
                std::to_string(t) + " frames, need at least " + std::to_string(cfg.receptive_field()));
  }
  if (x.cols() != cfg.input_dim) {
    throw Error(ErrorKind::DimensionMismatch,
                "feature dim " + std::to_string(x.cols()) + ", model expects " + std::to_string(cfg.input_dim));
  }
  const Vec<S> pc = pooled_conditioning<S>(cfg, c, t);

  ForwardCache<S> local;
  ForwardCache<S>& k = cache ? *cache : local;
  const Mat<S>* in = &x;
  for (int i = 0; i < 5; ++i) {
    k.spliced[i] = splice<S>(*in, cfg.contexts[i]);
    k.pre[i] = frame_affine<S>(k.spliced[i], p.frame[i].w, p.frame[i].b);
    k.act[i] = relu<S>(k.pre[i]);
    in = &k.act[i];
  }

  const PooledStats<S> stats = pool<S>(k.act[4], pc, p.pooling, &k.pool);
  k.stats.resize(2 * stats.mu.size());
  k.stats << stats.mu, stats.sigma;
  k.z6 = p.l6.w * k.stats + p.l6.b.col(0);
  k.a6 = k.z6.cwiseMax(S(0));
  k.z7 = p.l7.w * k.a6 + p.l7.b.col(0);
  k.a7 = k.z7.cwiseMax(S(0));
  k.logits = p.output.w * k.a7 + p.output.b.col(0);
  return k.logits;
}

template <typename S>
Vec<S> softmax(const Vec<S>& logits) {
  Vec<S> e = (logits.array() - logits.maxCoeff()).exp().matrix();
  return e / e.sum();
}

/// Adds scale * d(cross-entropy)/d(params) for one forward pass into `grads`.
template <typename S>
void accumulate_gradients(const ForwardCache<S>& k, int label, const Model<S>& model, ModelParams<S>& grads,
                          S scale = S(1)) {
  const ModelConfig& cfg = model.config;
  const auto& p = model.params;
  if (label < 0 || label >= cfg.n_speakers) {
    throw Error(ErrorKind::LabelOutOfRange,
                "label " + std::to_string(label) + " outside 0.." + std::to_string(cfg.n_speakers - 1));
  }
  if (k.logits.size() != cfg.n_speakers) throw Error(ErrorKind::ShapeMismatch, "forward cache is missing or stale");

  Vec<S> g = softmax<S>(k.logits);
  g[label] -= S(1);
  g *= scale;

  grads.output.w += g * k.a7.transpose();
  grads.output.b.col(0) += g;
  Vec<S> g7 = (p.output.w.transpose() * g).cwiseProduct(relu_mask<S>(k.z7));
  grads.l7.w += g7 * k.a6.transpose();
  grads.l7.b.col(0) += g7;
  Vec<S> g6 = (p.l7.w.transpose() * g7).cwiseProduct(relu_mask<S>(k.z6));
  grads.l6.w += g6 * k.stats.transpose();
  grads.l6.b.col(0) += g6;
  const Vec<S> g_stats = p.l6.w.transpose() * g6;
  const Eigen::Index d = cfg.pool_dim();

  Mat<S> g_act = pooling_backward<S>(k.pool, p.pooling, g_stats.head(d), g_stats.tail(d), grads.pooling);
  for (int i = 4; i >= 0; --i) {
    const Mat<S> g_pre = g_act.cwiseProduct(relu_mask<S>(k.pre[i]));
    grads.frame[i].w += g_pre.transpose() * k.spliced[i];
    grads.frame[i].b.col(0) += g_pre.colwise().sum().transpose();
    if (i == 0) break;
    const Mat<S> g_spliced = g_pre * p.frame[i].w;
    const auto& offsets = cfg.contexts[i];
    const Eigen::Index in_dim = k.act[i - 1].cols();
    g_act = Mat<S>::Zero(k.act[i - 1].rows(), in_dim);
    for (std::size_t j = 0; j < offsets.size(); ++j) {
      g_act.middleRows(offsets[j] - offsets.front(), g_pre.rows()) +=
          g_spliced.middleCols(static_cast<Eigen::Index>(j) * in_dim, in_dim);
    }
  }
}

template <typename S>
ModelParams<S> backward(const ForwardCache<S>& cache, int label, const Model<S>& model) {
  ModelParams<S> grads = zeros_like(model.params);
  accumulate_gradients<S>(cache, label, model, grads);
  return grads;
}

/// Output of the l6 affine component, before its ReLU.
template <typename S>
Vec<S> extract_embedding(const Mat<S>& x, const Vec<S>& c, const Model<S>& model) {
  ForwardCache<S> cache;
  forward<S>(x, c, model, &cache);
  return cache.z6;
}

struct SpeakerEmbedding {
  std::string utterance_id;
  VectorXd vector;
};

template <typename S>
SpeakerEmbedding extract_embedding(const MfccMatrix& feats, const ConditioningVector& c, const Model<S>& model,
                                   std::string utterance_id = {}) {
  const Vec<S> e = extract_embedding<S>(feats.frames.cast<S>(), c.values.cast<S>(), model);
  return {std::move(utterance_id), e.template cast<double>()};
}

template <typename T, typename S>
Model<T> cast_model(const Model<S>& m) {
  Model<T> out{m.config, zero_params<T>(m.config)};
  auto dst = tensors(out.params);
  auto src = tensors(m.params);
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = src[i]->template cast<T>();
  return out;
}

}  // namespace vfrpool
