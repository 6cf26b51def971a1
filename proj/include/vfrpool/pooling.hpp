#pragma once

// Self-attentive statistics pooling with conditioning on a per-frame scalar.
//
// Frames u_t (rows of U) are scored by an attention MLP applied to a
// transformed copy f(u_t, c_t); the softmax of the scores weights the mean
// and standard deviation of the ORIGINAL frames. The transform depends on
// the conditioning variant:
//
//   none        f = u
//   concat      f = tanh(W_c [u || c] + b_c)
//   gate        f = sigmoid(W_g c + b_g) * u
//   affine      f = gamma(c) * u + beta(c),  gamma/beta affine in c
//   combined_a  f = sigmoid(W_g c + b_g) * tanh(W_c [u || c] + b_c)
//   combined_b  f = gamma(c) * tanh(W_c [u || c] + b_c) + beta(c)
//
// vfr_weights bypasses attention entirely and pools with alpha_t = c_t / sum c.

#include "vfrpool/core.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>

namespace vfrpool {

enum class Variant { none, concat, gate, affine, combined_a, combined_b, vfr_weights };

inline constexpr Variant kAllVariants[] = {Variant::none,   Variant::concat,     Variant::gate,       Variant::affine,
                                           Variant::combined_a, Variant::combined_b, Variant::vfr_weights};

constexpr std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::none: return "none";
    case Variant::concat: return "concat";
    case Variant::gate: return "gate";
    case Variant::affine: return "affine";
    case Variant::combined_a: return "combined_a";
    case Variant::combined_b: return "combined_b";
    case Variant::vfr_weights: return "vfr_weights";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw Error(ErrorKind::UnknownVariant, "unknown conditioning variant '" + std::string(name) + "'");
}

constexpr bool uses_concat(Variant v) {
  return v == Variant::concat || v == Variant::combined_a || v == Variant::combined_b;
}
constexpr bool uses_gate(Variant v) { return v == Variant::gate || v == Variant::combined_a; }
constexpr bool uses_affine(Variant v) { return v == Variant::affine || v == Variant::combined_b; }
constexpr bool uses_attention(Variant v) { return v != Variant::vfr_weights; }

inline constexpr double kVarianceFloor = 1e-8;

template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

template <typename S>
struct AttentionParams {
  Mat<S> w1;  // d_a x d
  Mat<S> b1;  // d_a x 1
  Mat<S> w2;  // d_a x 1
  Mat<S> b2;  // 1 x 1

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    f("attention.w1", self.w1);
    f("attention.b1", self.b1);
    f("attention.w2", self.w2);
    f("attention.b2", self.b2);
  }
};

/// Only the tensors the variant needs are allocated; the rest stay empty.
template <typename S>
struct ConditioningParams {
  Variant variant = Variant::none;
  Mat<S> wc;  // d x (d + 1)
  Mat<S> bc;  // d x 1
  Mat<S> wg, bg;
  Mat<S> w_gamma, b_gamma;
  Mat<S> w_beta, b_beta;

  template <typename F>
  void visit(F&& f) { visit_impl(*this, f); }
  template <typename F>
  void visit(F&& f) const { visit_impl(*this, f); }

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f) {
    if (uses_concat(self.variant)) {
      f("cond.wc", self.wc);
      f("cond.bc", self.bc);
    }
    if (uses_gate(self.variant)) {
      f("cond.wg", self.wg);
      f("cond.bg", self.bg);
    }
    if (uses_affine(self.variant)) {
      f("cond.w_gamma", self.w_gamma);
      f("cond.b_gamma", self.b_gamma);
      f("cond.w_beta", self.w_beta);
      f("cond.b_beta", self.b_beta);
    }
  }
};

template <typename S>
struct PoolingParams {
  AttentionParams<S> attention;
  ConditioningParams<S> conditioning;

  Variant variant() const { return conditioning.variant; }

  template <typename F>
  void visit(F&& f) {
    if (uses_attention(variant())) attention.visit(f);
    conditioning.visit(f);
  }
  template <typename F>
  void visit(F&& f) const {
    if (uses_attention(variant())) attention.visit(f);
    conditioning.visit(f);
  }
};

/// Zero-filled parameters with the shapes required by `variant` for frame
/// dimension `dim` and attention width `attention_dim`.
template <typename S>
PoolingParams<S> make_pooling_params(Variant variant, Eigen::Index dim, Eigen::Index attention_dim) {
  PoolingParams<S> p;
  p.conditioning.variant = variant;
  if (uses_attention(variant)) {
    p.attention.w1 = Mat<S>::Zero(attention_dim, dim);
    p.attention.b1 = Mat<S>::Zero(attention_dim, 1);
    p.attention.w2 = Mat<S>::Zero(attention_dim, 1);
    p.attention.b2 = Mat<S>::Zero(1, 1);
  }
  auto& c = p.conditioning;
  if (uses_concat(variant)) {
    c.wc = Mat<S>::Zero(dim, dim + 1);
    c.bc = Mat<S>::Zero(dim, 1);
  }
  if (uses_gate(variant)) {
    c.wg = Mat<S>::Zero(dim, 1);
    c.bg = Mat<S>::Zero(dim, 1);
  }
  if (uses_affine(variant)) {
    c.w_gamma = Mat<S>::Zero(dim, 1);
    c.b_gamma = Mat<S>::Zero(dim, 1);
    c.w_beta = Mat<S>::Zero(dim, 1);
    c.b_beta = Mat<S>::Zero(dim, 1);
  }
  return p;
}

template <typename S>
struct PooledStats {
  Vec<S> mu;
  Vec<S> sigma;
  Vec<S> alphas;
};

/// Intermediate values of one pooling pass, consumed by pooling_backward.
template <typename S>
struct PoolingCache {
  Mat<S> u;       // T x d original frames
  Vec<S> c;       // T conditioning values
  Mat<S> concat;  // tanh(W_c [u || c] + b_c), when used
  Mat<S> gate;    // sigmoid(W_g c + b_g), when used
  Mat<S> gamma;   // gamma(c), when used
  Mat<S> f;       // transformed frames fed to the scorer
  Mat<S> hidden;  // sigmoid(W_1 f + b_1), T x d_a
  Vec<S> alphas;
  Vec<S> mu;
  Vec<S> var;     // unclamped weighted variance
  Vec<S> sigma;
};

namespace detail {

template <typename S>
void check_shape(const Mat<S>& m, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorKind::DimensionMismatch, std::string(name) + " is " + std::to_string(m.rows()) + "x" +
                                                  std::to_string(m.cols()) + ", expected " + std::to_string(rows) +
                                                  "x" + std::to_string(cols));
  }
}

template <typename S>
void check_conditioning(const ConditioningParams<S>& p, Eigen::Index d) {
  if (uses_concat(p.variant)) {
    check_shape(p.wc, d, d + 1, "W_c");
    check_shape(p.bc, d, 1, "b_c");
  }
  if (uses_gate(p.variant)) {
    check_shape(p.wg, d, 1, "W_g");
    check_shape(p.bg, d, 1, "b_g");
  }
  if (uses_affine(p.variant)) {
    check_shape(p.w_gamma, d, 1, "W_gamma");
    check_shape(p.b_gamma, d, 1, "b_gamma");
    check_shape(p.w_beta, d, 1, "W_beta");
    check_shape(p.b_beta, d, 1, "b_beta");
  }
}

// Per-frame outer product c_t * w^T + b^T, T x d.
template <typename S>
Mat<S> affine_in_c(const Vec<S>& c, const Mat<S>& w, const Mat<S>& b) {
  Mat<S> out = c * w.col(0).transpose();
  out.rowwise() += b.col(0).transpose();
  return out;
}

}  // namespace detail

/// Transforms frames for the attention scorer. `cache`, when given, receives
/// the intermediate activations needed for the backward pass.
template <typename S>
Mat<S> transform_frames(const Mat<S>& u, const Vec<S>& c, const ConditioningParams<S>& params,
                        PoolingCache<S>* cache = nullptr) {
  const Eigen::Index t = u.rows(), d = u.cols();
  if (c.size() != t) {
    throw Error(ErrorKind::DimensionMismatch, "conditioning has " + std::to_string(c.size()) +
                                                  " values for " + std::to_string(t) + " frames");
  }
  detail::check_conditioning(params, d);
  const Variant v = params.variant;
  if (v == Variant::none || v == Variant::vfr_weights) return u;

  Mat<S> base = u;
  if (uses_concat(v)) {
    Mat<S> z = u * params.wc.leftCols(d).transpose() + c * params.wc.col(d).transpose();
    z.rowwise() += params.bc.col(0).transpose();
    base = z.array().tanh().matrix();
    if (cache) cache->concat = base;
  }
  if (uses_gate(v)) {
    Mat<S> g = detail::affine_in_c(c, params.wg, params.bg).unaryExpr([](S x) { return sigmoid(x); });
    Mat<S> out = g.cwiseProduct(base);
    if (cache) cache->gate = std::move(g);
    return out;
  }
  if (uses_affine(v)) {
    Mat<S> gamma = detail::affine_in_c(c, params.w_gamma, params.b_gamma);
    Mat<S> out = gamma.cwiseProduct(base) + detail::affine_in_c(c, params.w_beta, params.b_beta);
    if (cache) cache->gamma = std::move(gamma);
    return out;
  }
  return base;  // concat only
}

/// Softmax over frames of w2^T sigmoid(W1 f_t + b1) + b2.
template <typename S>
Vec<S> attention_scores(const Mat<S>& f, const AttentionParams<S>& params, Mat<S>* hidden_out = nullptr) {
  if (f.rows() < 1) throw Error(ErrorKind::DimensionMismatch, "attention needs at least one frame");
  detail::check_shape(params.w1, params.w1.rows(), f.cols(), "W_1");
  const Eigen::Index da = params.w1.rows();
  detail::check_shape(params.b1, da, 1, "b_1");
  detail::check_shape(params.w2, da, 1, "W_2");
  detail::check_shape(params.b2, 1, 1, "b_2");

  Mat<S> hidden = f * params.w1.transpose();
  hidden.rowwise() += params.b1.col(0).transpose();
  hidden = hidden.unaryExpr([](S x) { return sigmoid(x); });
  Vec<S> logits = hidden * params.w2.col(0);
  logits.array() += params.b2(0, 0);
  Vec<S> alphas = (logits.array() - logits.maxCoeff()).exp().matrix();
  alphas /= alphas.sum();
  if (hidden_out) *hidden_out = std::move(hidden);
  return alphas;
}

template <typename S>
PooledStats<S> weighted_stats(const Mat<S>& u, const Vec<S>& alphas, Vec<S>* var_out = nullptr) {
  if (alphas.size() != u.rows()) throw Error(ErrorKind::DimensionMismatch, "one weight per frame required");
  if (alphas.minCoeff() < S(0) || std::abs(static_cast<double>(alphas.sum()) - 1.0) > 1e-6) {
    throw Error(ErrorKind::WeightNotNormalized, "pooling weights must be non-negative and sum to 1");
  }
  PooledStats<S> out;
  out.alphas = alphas;
  out.mu = u.transpose() * alphas;
  Vec<S> var = u.array().square().matrix().transpose() * alphas - out.mu.cwiseProduct(out.mu);
  out.sigma = var.cwiseMax(S(kVarianceFloor)).cwiseSqrt();
  if (var_out) *var_out = std::move(var);
  return out;
}

template <typename S>
Vec<S> vfr_weights(const Vec<S>& c) {
  const S total = c.sum();
  if (!(total > S(0))) throw Error(ErrorKind::AllZeroConditioning, "conditioning sums to zero over the pooled frames");
  return c / total;
}

template <typename S>
PooledStats<S> vfr_weight_pooling(const Mat<S>& u, const Vec<S>& c) {
  if (c.size() != u.rows()) throw Error(ErrorKind::DimensionMismatch, "one conditioning value per frame required");
  return weighted_stats<S>(u, vfr_weights<S>(c));
}

/// Full pooling forward pass for any variant.
template <typename S>
PooledStats<S> pool(const Mat<S>& u, const Vec<S>& c, const PoolingParams<S>& params,
                    PoolingCache<S>* cache = nullptr) {
  if (c.size() != u.rows()) throw Error(ErrorKind::DimensionMismatch, "one conditioning value per frame required");
  Vec<S> alphas;
  if (params.variant() == Variant::vfr_weights) {
    alphas = vfr_weights<S>(c);
  } else {
    Mat<S> f = transform_frames<S>(u, c, params.conditioning, cache);
    Mat<S> hidden;
    alphas = attention_scores<S>(f, params.attention, &hidden);
    if (cache) {
      cache->f = std::move(f);
      cache->hidden = std::move(hidden);
    }
  }
  Vec<S> var;
  PooledStats<S> stats = weighted_stats<S>(u, alphas, &var);
  if (cache) {
    cache->u = u;
    cache->c = c;
    cache->alphas = stats.alphas;
    cache->mu = stats.mu;
    cache->var = std::move(var);
    cache->sigma = stats.sigma;
  }
  return stats;
}

/// Backward pass through pool(). Parameter gradients are added into
/// `grads` (shaped like the parameters); the gradient w.r.t. the frames is
/// returned.
template <typename S>
Mat<S> pooling_backward(const PoolingCache<S>& cache, const PoolingParams<S>& params, const Vec<S>& grad_mu,
                        const Vec<S>& grad_sigma, PoolingParams<S>& grads) {
  const Eigen::Index t = cache.u.rows(), d = cache.u.cols();
  if (grad_mu.size() != d || grad_sigma.size() != d || cache.alphas.size() != t) {
    throw Error(ErrorKind::ShapeMismatch, "pooling gradients do not match the cached forward pass");
  }
  const Variant v = params.variant();

  // sigma = sqrt(max(var, floor)); var = sum a u^2 - mu^2
  Vec<S> grad_var(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    grad_var[j] = cache.var[j] > S(kVarianceFloor) ? grad_sigma[j] / (S(2) * cache.sigma[j]) : S(0);
  }
  const Vec<S> grad_mu_total = grad_mu - S(2) * cache.mu.cwiseProduct(grad_var);

  // Direct path through the statistics.
  Mat<S> grad_u = (cache.u.array().rowwise() * (S(2) * grad_var).transpose().array()).matrix();
  grad_u.rowwise() += grad_mu_total.transpose();
  grad_u = (grad_u.array().colwise() * cache.alphas.array()).matrix();

  if (!uses_attention(v)) return grad_u;

  const Vec<S> grad_alpha = cache.u * grad_mu_total + cache.u.array().square().matrix() * grad_var;
  const S mean_grad = cache.alphas.dot(grad_alpha);
  const Vec<S> grad_logit = (cache.alphas.array() * (grad_alpha.array() - mean_grad)).matrix();

  auto& ga = grads.attention;
  const auto& pa = params.attention;
  ga.w2.col(0) += cache.hidden.transpose() * grad_logit;
  ga.b2(0, 0) += grad_logit.sum();
  const Mat<S> grad_hidden_pre =
      ((grad_logit * pa.w2.col(0).transpose()).array() * cache.hidden.array() * (S(1) - cache.hidden.array()))
          .matrix();
  ga.w1 += grad_hidden_pre.transpose() * cache.f;
  ga.b1.col(0) += grad_hidden_pre.colwise().sum().transpose();
  const Mat<S> grad_f = grad_hidden_pre * pa.w1;

  auto& gc = grads.conditioning;
  const auto& pc = params.conditioning;
  if (v == Variant::none) {
    grad_u += grad_f;
    return grad_u;
  }

  // Gradient reaching the concat output (or u itself when there is no concat).
  Mat<S> grad_base;
  const Mat<S>& base = uses_concat(v) ? cache.concat : cache.u;
  if (uses_gate(v)) {
    grad_base = grad_f.cwiseProduct(cache.gate);
    const Mat<S> grad_gate_pre =
        (grad_f.array() * base.array() * cache.gate.array() * (S(1) - cache.gate.array())).matrix();
    gc.wg.col(0) += grad_gate_pre.transpose() * cache.c;
    gc.bg.col(0) += grad_gate_pre.colwise().sum().transpose();
  } else if (uses_affine(v)) {
    grad_base = grad_f.cwiseProduct(cache.gamma);
    const Mat<S> grad_gamma = grad_f.cwiseProduct(base);
    gc.w_gamma.col(0) += grad_gamma.transpose() * cache.c;
    gc.b_gamma.col(0) += grad_gamma.colwise().sum().transpose();
    gc.w_beta.col(0) += grad_f.transpose() * cache.c;
    gc.b_beta.col(0) += grad_f.colwise().sum().transpose();
  } else {
    grad_base = grad_f;
  }

  if (uses_concat(v)) {
    const Mat<S> grad_z = (grad_base.array() * (S(1) - cache.concat.array().square())).matrix();
    gc.wc.leftCols(d) += grad_z.transpose() * cache.u;
    gc.wc.col(d) += grad_z.transpose() * cache.c;
    gc.bc.col(0) += grad_z.colwise().sum().transpose();
    grad_u += grad_z * pc.wc.leftCols(d);
  } else {
    grad_u += grad_base;
  }
  return grad_u;
}

}  // namespace vfrpool
