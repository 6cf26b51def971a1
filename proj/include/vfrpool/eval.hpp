#pragma once

// Verification backend: cosine scoring, equal error rate and McNemar's test
// on paired accept/reject decisions.

#include "vfrpool/core.hpp"
#include "vfrpool/network.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace vfrpool {

struct Trial {
  std::string enroll_id;
  std::string test_id;
  bool is_target = false;
};

using TrialList = std::vector<Trial>;

struct ScoreSet {
  std::vector<double> scores;  // aligned with the trial list
};

struct DecisionSet {
  std::vector<bool> accept;
  double threshold = 0.0;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
};

struct McNemarResult {
  double statistic = 0.0;
  bool significant_at_05 = false;
  int n01 = 0;  // A wrong, B right
  int n10 = 0;  // A right, B wrong
};

// Chi-square (1 dof) critical value at p = 0.05.
inline constexpr double kChiSquare05 = 3.841;

inline double cosine_score(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) {
    throw Error(ErrorKind::DimensionMismatch, "embedding sizes " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
  }
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw Error(ErrorKind::ZeroVector, "cannot score an all-zero embedding");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

inline double cosine_score(const SpeakerEmbedding& a, const SpeakerEmbedding& b) { return cosine_score(a.vector, b.vector); }

struct OperatingPoint {
  double threshold = 0.0;
  double far = 0.0;  // nontargets with score >= threshold
  double frr = 0.0;  // targets with score < threshold
};

/// Every distinct score as a threshold (accept iff score >= theta), in
/// increasing order, plus a final reject-everything point.
inline std::vector<OperatingPoint> operating_points(const TrialList& trials, const ScoreSet& scores) {
  if (trials.size() != scores.scores.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(scores.scores.size()) + " scores for " + std::to_string(trials.size()) + " trials");
  }
  std::vector<double> tar, non;
  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (!std::isfinite(scores.scores[i])) throw Error(ErrorKind::DegenerateTrials, "non-finite score");
    (trials[i].is_target ? tar : non).push_back(scores.scores[i]);
  }
  if (tar.empty() || non.empty()) throw Error(ErrorKind::DegenerateTrials, "need at least one target and one nontarget trial");
  std::sort(tar.begin(), tar.end());
  std::sort(non.begin(), non.end());

  std::vector<double> thresholds = tar;
  thresholds.insert(thresholds.end(), non.begin(), non.end());
  std::sort(thresholds.begin(), thresholds.end());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

  const auto n_tar = static_cast<double>(tar.size()), n_non = static_cast<double>(non.size());
  std::vector<OperatingPoint> points;
  points.reserve(thresholds.size() + 1);
  for (double th : thresholds) {
    const auto n_accepted = non.end() - std::lower_bound(non.begin(), non.end(), th);
    const auto n_rejected = std::lower_bound(tar.begin(), tar.end(), th) - tar.begin();
    points.push_back({th, static_cast<double>(n_accepted) / n_non, static_cast<double>(n_rejected) / n_tar});
  }
  points.push_back({std::nextafter(thresholds.back(), std::numeric_limits<double>::infinity()), 0.0, 1.0});
  return points;
}

/// Locates where FAR - FRR changes sign along the sweep. Between operating
/// points the crossing is linearly interpolated; the returned threshold is
/// the closer of the two bracketing operating points.
inline EerResult compute_eer(const TrialList& trials, const ScoreSet& scores) {
  const std::vector<OperatingPoint> points = operating_points(trials, scores);
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double diff = points[k].far - points[k].frr;
    if (diff > 0.0) continue;
    if (diff == 0.0 || k == 0) return {points[k].far, points[k].threshold};
    const OperatingPoint& a = points[k - 1];
    const OperatingPoint& b = points[k];
    const double da = a.far - a.frr, db = b.far - b.frr;
    const double lambda = da / (da - db);
    const double eer = a.far + lambda * (b.far - a.far);
    const double threshold = std::abs(da) < std::abs(db) ? a.threshold : b.threshold;
    return {eer, threshold};
  }
  return {points.back().far, points.back().threshold};  // unreachable: last point has FAR - FRR = -1
}

inline DecisionSet decisions_at_threshold(const ScoreSet& scores, double threshold) {
  DecisionSet d;
  d.threshold = threshold;
  d.accept.reserve(scores.scores.size());
  for (double s : scores.scores) d.accept.push_back(s >= threshold);
  return d;
}

inline DecisionSet decisions_at_eer(const TrialList& trials, const ScoreSet& scores) {
  return decisions_at_threshold(scores, compute_eer(trials, scores).threshold);
}

/// McNemar's test without continuity correction on the discordant pairs.
inline McNemarResult mcnemar(const DecisionSet& a, const DecisionSet& b, const TrialList& truth) {
  if (a.accept.size() != truth.size() || b.accept.size() != truth.size()) {
    throw Error(ErrorKind::LengthMismatch, "decision sets must match the trial list length");
  }
  McNemarResult r;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool a_right = a.accept[i] == truth[i].is_target;
    const bool b_right = b.accept[i] == truth[i].is_target;
    if (!a_right && b_right) ++r.n01;
    if (a_right && !b_right) ++r.n10;
  }
  const int discordant = r.n01 + r.n10;
  if (discordant > 0) {
    const double diff = static_cast<double>(r.n01 - r.n10);
    r.statistic = diff * diff / discordant;
  }
  r.significant_at_05 = r.statistic > kChiSquare05;
  return r;
}

// ---- text formats ---------------------------------------------------------

namespace detail {

// Splits a whitespace-delimited line after stripping a trailing `#` comment.
inline std::vector<std::string> fields(std::string line) {
  if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
  std::istringstream is(line);
  std::vector<std::string> out;
  for (std::string tok; is >> tok;) out.push_back(tok);
  return out;
}

}  // namespace detail

/// `enroll_id test_id target|nontarget` per line.
inline TrialList read_trials(std::istream& is) {
  TrialList trials;
  std::string line;
  for (int line_no = 1; std::getline(is, line); ++line_no) {
    const auto f = detail::fields(line);
    if (f.empty()) continue;
    if (f.size() != 3 || (f[2] != "target" && f[2] != "nontarget")) {
      throw Error(ErrorKind::ParseError, "trial line " + std::to_string(line_no) + ": expected 'enroll test target|nontarget'");
    }
    trials.push_back({f[0], f[1], f[2] == "target"});
  }
  return trials;
}

inline TrialList read_trials(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  return read_trials(is);
}

inline void write_trials(const std::string& path, const TrialList& trials) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  for (const auto& t : trials) os << t.enroll_id << ' ' << t.test_id << ' ' << (t.is_target ? "target" : "nontarget") << '\n';
}

/// Reads `enroll_id test_id score` lines and orders them like `trials`.
inline ScoreSet read_scores(std::istream& is, const TrialList& trials) {
  std::map<std::pair<std::string, std::string>, double> by_pair;
  std::string line;
  for (int line_no = 1; std::getline(is, line); ++line_no) {
    const auto f = detail::fields(line);
    if (f.empty()) continue;
    if (f.size() != 3) throw Error(ErrorKind::ParseError, "score line " + std::to_string(line_no) + ": expected 'enroll test score'");
    double v = 0.0;
    try {
      std::size_t used = 0;
      v = std::stod(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument(f[2]);
    } catch (const std::exception&) {
      throw Error(ErrorKind::ParseError, "score line " + std::to_string(line_no) + ": bad score '" + f[2] + "'");
    }
    by_pair[{f[0], f[1]}] = v;
  }
  ScoreSet out;
  out.scores.reserve(trials.size());
  for (const auto& t : trials) {
    const auto it = by_pair.find({t.enroll_id, t.test_id});
    if (it == by_pair.end()) throw Error(ErrorKind::LengthMismatch, "no score for trial " + t.enroll_id + " " + t.test_id);
    out.scores.push_back(it->second);
  }
  return out;
}

inline ScoreSet read_scores(const std::string& path, const TrialList& trials) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  return read_scores(is, trials);
}

inline void write_scores(const std::string& path, const TrialList& trials, const ScoreSet& scores) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < trials.size(); ++i) {
    os << trials[i].enroll_id << ' ' << trials[i].test_id << ' ' << scores.scores[i] << '\n';
  }
}

/// Embedding CSV: header `utterance_id,e0,...`, then one row per embedding.
inline void write_embedding_csv(std::ostream& os, const std::vector<SpeakerEmbedding>& embeddings) {
  const Eigen::Index dim = embeddings.empty() ? 0 : embeddings.front().vector.size();
  os << "utterance_id";
  for (Eigen::Index i = 0; i < dim; ++i) os << ",e" << i;
  os << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& e : embeddings) {
    os << e.utterance_id;
    for (Eigen::Index i = 0; i < e.vector.size(); ++i) os << ',' << e.vector[i];
    os << '\n';
  }
}

inline void write_embedding_csv(const std::string& path, const std::vector<SpeakerEmbedding>& embeddings) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::IoError, "cannot open '" + path + "' for writing");
  write_embedding_csv(os, embeddings);
}

inline std::vector<SpeakerEmbedding> read_embedding_csv(std::istream& is) {
  std::vector<SpeakerEmbedding> out;
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::ParseError, "embedding csv is empty");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    SpeakerEmbedding e;
    std::getline(row, e.utterance_id, ',');
    std::vector<double> values;
    while (std::getline(row, cell, ',')) {
      try {
        values.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw Error(ErrorKind::ParseError, "bad embedding value '" + cell + "'");
      }
    }
    e.vector = Eigen::Map<VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    out.push_back(std::move(e));
  }
  return out;
}

inline std::vector<SpeakerEmbedding> read_embedding_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  return read_embedding_csv(is);
}

}  // namespace vfrpool
