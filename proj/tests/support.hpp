#pragma once

#include "vfrpool/vfrpool.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <numbers>
#include <random>
#include <string>

#include <unistd.h>

namespace testutil {

using vfrpool::MatrixXd;
using vfrpool::VectorXd;

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("vfrpool_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string file(const std::string& name) const { return (path_ / name).string(); }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline vfrpool::AudioBuffer sine(double hz, std::size_t n, double amplitude = 0.5, int rate = 16000, double phase = 0.0) {
  vfrpool::AudioBuffer a;
  a.sample_rate_hz = rate;
  a.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) a.samples[i] = amplitude * std::sin(2.0 * std::numbers::pi * hz * i / rate + phase);
  return a;
}

inline vfrpool::AudioBuffer noise(std::size_t n, double stddev, std::uint64_t seed, int rate = 16000) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, stddev);
  vfrpool::AudioBuffer a;
  a.sample_rate_hz = rate;
  a.samples.resize(n);
  for (double& s : a.samples) s = std::clamp(g(rng), -1.0, 1.0);
  return a;
}

inline MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

// Central difference of a scalar function with respect to every entry of
// `param`. Returns the numeric gradient with the same shape.
inline MatrixXd numeric_gradient(MatrixXd& param, const std::function<double()>& f, double h = 1e-5) {
  MatrixXd g(param.rows(), param.cols());
  for (Eigen::Index i = 0; i < param.size(); ++i) {
    const double saved = param.data()[i];
    param.data()[i] = saved + h;
    const double up = f();
    param.data()[i] = saved - h;
    const double down = f();
    param.data()[i] = saved;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max |a - n| / max(|a|, |n|, floor), elementwise. The floor keeps entries
// that are zero on both sides from dividing by zero.
inline double max_relative_error(const MatrixXd& analytic, const MatrixXd& numeric, double floor = 1e-7) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], n = numeric.data()[i];
    worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
  }
  return worst;
}

// Alternating 150 ms bursts of white noise and digital silence: two
// well-separated entropy levels.
inline vfrpool::AudioBuffer two_level_signal(int bursts, std::uint64_t seed) {
  const vfrpool::AudioBuffer loud = noise(static_cast<std::size_t>(bursts) * 2400, 0.2, seed);
  vfrpool::AudioBuffer a;
  for (int b = 0; b < bursts; ++b) {
    a.samples.insert(a.samples.end(), loud.samples.begin() + b * 2400, loud.samples.begin() + (b + 1) * 2400);
    a.samples.insert(a.samples.end(), 2400, 0.0);
  }
  return a;
}

// Coefficient of variation of the entropy summed over each inter-pick gap:
// the held curve value at every oversampled position from one pick up to,
// not including, the next.
inline double gap_entropy_cv(const vfrpool::EntropyCurve& curve, const vfrpool::PickMask& mask) {
  std::vector<std::size_t> picks;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (mask.bits[p]) picks.push_back(p);
  }
  std::vector<double> sums;
  for (std::size_t k = 0; k + 1 < picks.size(); ++k) {
    double s = 0.0;
    for (std::size_t p = picks[k]; p < picks[k + 1]; ++p) s += vfrpool::held_entropy(curve, p);
    sums.push_back(s);
  }
  double mean = 0.0, var = 0.0;
  for (double s : sums) mean += s / static_cast<double>(sums.size());
  for (double s : sums) var += (s - mean) * (s - mean) / static_cast<double>(sums.size());
  return std::sqrt(var) / mean;
}

// Small network used for whole-model gradient checks.
inline vfrpool::ModelConfig tiny_config(vfrpool::Variant v, int input_dim = 5, int n_speakers = 3) {
  vfrpool::ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.layer_dims = {4, 4, 4, 4, 6, 4, 4};
  cfg.attention_dim = 3;
  cfg.n_speakers = n_speakers;
  cfg.variant = v;
  return cfg;
}

// Glorot weights plus small random biases so few units sit exactly at a ReLU kink.
inline vfrpool::Model<double> random_tiny_model(vfrpool::Variant v, std::uint64_t seed) {
  auto model = vfrpool::init_model<double>(tiny_config(v), seed);
  std::mt19937_64 rng(seed ^ 0x5eedULL);
  model.params.visit([&](std::string_view name, MatrixXd& m) {
    if (vfrpool::is_bias_name(name)) m = random_matrix(m.rows(), m.cols(), rng, 0.3);
  });
  return model;
}

struct GradCheck {
  double max_error = 0.0;
  std::string worst;
};

// Compares backward() against central differences of the cross-entropy for
// every parameter of a tiny model on one random T-frame utterance.
inline GradCheck check_model_gradients(vfrpool::Variant v, std::uint64_t seed, int t_frames = 17) {
  auto model = random_tiny_model(v, seed);
  std::mt19937_64 rng(seed + 1);
  const MatrixXd x = random_matrix(t_frames, model.config.input_dim, rng);
  VectorXd c(t_frames);
  std::uniform_int_distribution<int> cd(0, 4);
  for (int i = 0; i < t_frames; ++i) c[i] = cd(rng);
  if (c.sum() == 0) c[model.config.left_context()] = 1;
  const int label = static_cast<int>(seed % 3);

  vfrpool::ForwardCache<double> cache;
  vfrpool::forward<double>(x, c, model, &cache);
  auto grads = vfrpool::backward<double>(cache, label, model);
  auto analytic = vfrpool::tensors(grads);

  auto loss = [&] { return vfrpool::cross_entropy<double>(vfrpool::forward<double>(x, c, model), label); };
  GradCheck out;
  std::size_t i = 0;
  model.params.visit([&](std::string_view name, MatrixXd& m) {
    // attention.b2 has an exactly zero gradient (softmax ignores a shared
    // offset), so the floor sits above finite-difference noise of ~1e-11.
    const double err = max_relative_error(*analytic[i++], numeric_gradient(m, loss, 1e-5), 1e-6);
    if (err > out.max_error) {
      out.max_error = err;
      out.worst = std::string(name);
    }
  });
  return out;
}

}  // namespace testutil
