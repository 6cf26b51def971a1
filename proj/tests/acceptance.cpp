// Acceptance run: one PASS/FAIL line per criterion. Command output from the
// end-to-end experiment goes to log files under --workdir.

#include "support.hpp"

#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace vfrpool;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool ok, const std::string& detail) {
  std::printf("[%s] %d %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

// Runs one CLI command in-process, appending its output to `log`.
int cli_run(const std::vector<std::string>& args, std::ostream& log, std::string* stdout_text = nullptr) {
  std::ostringstream out, err;
  log << "$ vfrpool";
  for (const auto& a : args) log << ' ' << a;
  log << '\n';
  const int code = cli::run(args, {out, err});
  log << out.str() << err.str() << "exit " << code << "\n\n" << std::flush;
  if (stdout_text) *stdout_text = out.str();
  return code;
}

// ---- 1 -------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::string where;
  for (Variant v : kAllVariants) {
    const auto r = testutil::check_model_gradients(v, 31);
    if (r.max_error > worst) {
      worst = r.max_error;
      where = std::string(variant_name(v)) + "/" + r.worst;
    }
  }
  const double secs = seconds_since(t0);
  report(1, worst < 1e-4 && secs < 60.0,
         fmt("gradient suite: 7 modes, max relative error %.2e (%s), %.2f s", worst, where.c_str(), secs));
}

// ---- 2 -------------------------------------------------------------------------

void pooling_reduction() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(1, 60), cval(0, 4), dim(1, 12);
  double worst = 0.0;
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const Variant v = kAllVariants[i % 6];  // the six attention variants
    const int t = len(rng), d = dim(rng);
    const MatrixXd u = testutil::random_matrix(t, d, rng, 2.0);
    VectorXd c(t);
    for (auto& x : c) x = cval(rng);
    PoolingParams<double> p = make_pooling_params<double>(v, d, 5);
    p.visit([&](std::string_view, MatrixXd& m) { m = testutil::random_matrix(m.rows(), m.cols(), rng); });
    p.attention.w2.setZero();
    const PooledStats<double> s = pool<double>(u, c, p);
    for (int j = 0; j < d; ++j) {
      double mean = 0.0, var = 0.0;
      for (int r = 0; r < t; ++r) mean += u(r, j) / t;
      for (int r = 0; r < t; ++r) var += (u(r, j) - mean) * (u(r, j) - mean) / t;
      const double sd = std::sqrt(std::max(var, kVarianceFloor));
      worst = std::max({worst, std::abs(s.mu[j] - mean), std::abs(s.sigma[j] - sd)});
    }
    ++checked;
  }
  report(2, worst <= 1e-10, fmt("pooling with W2 = 0: %d utterances, max |diff| vs plain mean/std %.2e", checked, worst));
}

// ---- 3 -------------------------------------------------------------------------

void vfr_bounds() {
  bool ordered = true, in_range = true;
  std::size_t hi_n = 0, hi_picks = 0, lo_n = 0, lo_picks = 0;
  int files = 0, with_low = 0;
  double worst_file_ratio = std::numeric_limits<double>::infinity();
  SynthConfig cfg;
  for (int i = 0; i < 50; ++i) {
    std::mt19937_64 rng(1000 + i);
    AudioBuffer audio;
    if (i % 2 == 0) {
      cfg.frames_per_utt = 100 + 7 * i;
      cfg.seed = static_cast<std::uint64_t>(i);
      audio = synth_utterance(cfg, random_speaker(rng), 0, i, i % 4 ? Style::slow : Style::fast, false).audio;
    } else {
      // noise bursts of random level and length
      std::uniform_int_distribution<int> seg(200, 3000);
      std::uniform_real_distribution<double> level(0.0, 0.3);
      std::normal_distribution<double> n;
      audio.sample_rate_hz = 16000;
      while (audio.samples.size() < 16000) {
        const int len = seg(rng);
        const double a = level(rng);
        for (int k = 0; k < len; ++k) audio.samples.push_back(a * n(rng));
      }
    }
    const VfrAnalysis v = analyze_vfr(audio);
    const Thresholds& th = v.thresholds;
    ordered &= th.t1 >= th.t2 && th.t2 >= th.t3;
    for (double c : v.conditioning.values) in_range &= c >= 0.0 && c <= 4.0 && c == std::floor(c);
    std::size_t fh = 0, fhp = 0, fl = 0, flp = 0;
    for (std::size_t p = 0; p < v.mask.size(); ++p) {
      const double h = held_entropy(v.curve, p);
      if (h >= th.t1) {
        ++fh;
        fhp += v.mask.bits[p];
      } else if (h < th.t3) {
        ++fl;
        flp += v.mask.bits[p];
      }
    }
    hi_n += fh;
    hi_picks += fhp;
    lo_n += fl;
    lo_picks += flp;
    if (fl > 0 && fh > 0 && flp > 0) {
      ++with_low;
      worst_file_ratio = std::min(worst_file_ratio, (double(fhp) / fh) / (double(flp) / fl));
    }
    ++files;
  }
  const double ratio = lo_n && lo_picks ? (double(hi_picks) / hi_n) / (double(lo_picks) / lo_n) : 0.0;
  report(3, ordered && in_range && ratio >= 1.5,
         fmt("VFR bounds on %d WAVs: T1>=T2>=T3 %s, c in {0..4} %s, pick density high/low %.3f "
             "(%zu high, %zu low frames; smallest per-file ratio %.3f over %d files with low spans)",
             files, ordered ? "yes" : "no", in_range ? "yes" : "no", ratio, hi_n, lo_n, worst_file_ratio, with_low));
}

// ---- 4 -------------------------------------------------------------------------

void equalization() {
  const AudioBuffer a = testutil::two_level_signal(8, 3);
  const VfrAnalysis v = analyze_vfr(a);
  PickMask fixed;
  fixed.bits.assign(v.mask.size(), 0);
  for (std::size_t p = 0; p < fixed.size(); p += 4) fixed.bits[p] = 1;
  const double cv_vfr = testutil::gap_entropy_cv(v.curve, v.mask);
  const double cv_fixed = testutil::gap_entropy_cv(v.curve, fixed);
  report(4, cv_vfr <= cv_fixed, fmt("entropy equalization: CV of summed entropy per gap, VFR %.4f vs fixed r=4 %.4f", cv_vfr, cv_fixed));
}

// ---- 5 -------------------------------------------------------------------------

void closed_forms() {
  EntropyCurve curve;
  curve.values = {10.0, 6.0, 2.0};
  const Thresholds th = compute_thresholds(curve);
  const bool th_ok = th.t1 == 8.8 && th.t2 == 6.8 && th.t3 == 4.0;

  MatrixXd block(12, 2);
  for (int t = 0; t < 12; ++t) {
    const double s = t % 2 ? 1.0 : -1.0;
    block(t, 0) = s;
    block(t, 1) = s * std::sqrt(3.0);
  }
  const double h = trace_entropy(2, variance_trace(block));
  const bool h_ok = std::abs(h - 3.2242) <= 1e-3;

  const double ce = cross_entropy<double>(VectorXd::Zero(10), 0);
  const bool ce_ok = std::abs(ce - std::log(10.0)) <= 1e-9;

  TrialList truth(12, Trial{"e", "t", true});
  DecisionSet a, b;
  a.accept.assign(12, true);
  b.accept.assign(12, true);
  for (int i = 0; i < 10; ++i) a.accept[i] = false;
  for (int i = 10; i < 12; ++i) b.accept[i] = false;
  const McNemarResult m = mcnemar(a, b, truth);
  const bool m_ok = m.n01 == 10 && m.n10 == 2 && std::abs(m.statistic - 5.333) <= 1e-3 && m.significant_at_05;

  report(5, th_ok && h_ok && ce_ok && m_ok,
         fmt("closed forms: thresholds (%.17g, %.17g, %.17g) %s; entropy %.4f %s; CE %.12f %s; McNemar %.4f %s %s", th.t1,
             th.t2, th.t3, th_ok ? "ok" : "BAD", h, h_ok ? "ok" : "BAD", ce, ce_ok ? "ok" : "BAD", m.statistic,
             m.significant_at_05 ? "significant" : "not-significant", m_ok ? "ok" : "BAD"));
}

// ---- 6 -------------------------------------------------------------------------

struct LastEpoch {
  double loss = 0.0, accuracy = 0.0;
};

LastEpoch last_epoch(const fs::path& loss_csv) {
  std::ifstream is(loss_csv);
  std::string line, last;
  while (std::getline(is, line)) {
    if (!line.empty()) last = line;
  }
  LastEpoch e;
  if (std::sscanf(last.c_str(), "%*d,%lf,%lf", &e.loss, &e.accuracy) != 2) e.accuracy = -1.0;
  return e;
}

double parse_eer(const std::string& out) {
  double eer = -1.0;
  if (std::sscanf(out.c_str(), "EER %lf", &eer) != 1) return -1.0;
  return eer;
}

constexpr const char* kExperimentConfig =
    "# desk-scale run on raw (unnormalized) synthetic features\n"
    "batch_size = 16\n"
    "epochs = 20\n"
    "learning_rate = 0.001\n"
    "chunk_len_frames = 200\n"
    "seed = 1\n";

void end_to_end(const fs::path& work) {
  const fs::path dir = work / "experiment";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream log(dir / "commands.log");
  {
    std::ofstream cfg(dir / "run.cfg");
    cfg << kExperimentConfig;
  }
  const std::string data = (dir / "data").string();
  bool ran = true;
  std::string out;
  ran &= cli_run({"synth", "--speakers", "10", "--utts", "8", "--frames", "500", "--heldout-utts", "2", "--trials", "200",
                  "--seed", "1", "--out", data},
                 log) == 0;

  // held-out WAVs in their own directory for batch embedding
  fs::create_directories(dir / "heldout");
  for (const auto& e : cli::read_list(dir / "data" / "heldout.list")) {
    fs::copy_file(dir / "data" / "wav" / (e.id + ".wav"), dir / "heldout" / (e.id + ".wav"), fs::copy_options::overwrite_existing);
  }

  // staged front end: extract -> vfr
  ran &= cli_run({"extract", "--wav", (dir / "heldout").string(), "--out", (dir / "feats").string(), "--no-norm"}, log) == 0;
  ran &= cli_run({"vfr", "--wav", (dir / "heldout").string(), "--cond", (dir / "cond").string()}, log) == 0;

  const std::vector<std::string> systems{"none", "combined_a"};
  std::vector<LastEpoch> final_epoch;
  std::vector<double> eers, train_secs;
  bool staged_matches = true;
  for (const auto& sys : systems) {
    const std::string model = (dir / (sys + ".bin")).string();
    const auto t0 = Clock::now();
    ran &= cli_run({"train", "--data", data, "--config", (dir / "run.cfg").string(), "--variant", sys, "--out", model,
                    "--no-norm"},
                   log) == 0;
    train_secs.push_back(seconds_since(t0));
    final_epoch.push_back(last_epoch(model + ".loss.csv"));

    const fs::path emb = dir / ("emb_" + sys);
    ran &= cli_run({"embed", "--model", model, "--wav", (dir / "heldout").string(), "--out", emb.string(), "--no-norm"}, log) == 0;
    // the staged files must give the same embedding as the fused command
    const fs::path staged = dir / ("staged_" + sys);
    fs::create_directories(staged);
    for (const auto& entry : fs::directory_iterator(dir / "feats")) {
      const std::string id = entry.path().stem().string();
      const fs::path dst = staged / (id + ".csv");
      ran &= cli_run({"embed", "--model", model, "--feats", entry.path().string(), "--cond",
                      (dir / "cond" / (id + ".csv")).string(), "--out", dst.string()},
                     log) == 0;
      staged_matches &= slurp(dst) == slurp(emb / (id + ".csv"));
    }
    const std::string scores = (dir / ("scores_" + sys + ".txt")).string();
    ran &= cli_run({"score", "--trials", data + "/trials.txt", "--embeds", emb.string(), "--out", scores}, log) == 0;
    ran &= cli_run({"eer", "--trials", data + "/trials.txt", "--scores", scores, "--det-csv",
                    (dir / ("det_" + sys + ".csv")).string()},
                   log, &out) == 0;
    eers.push_back(parse_eer(out));
  }
  std::string mcn;
  ran &= cli_run({"mcnemar", "--trials", data + "/trials.txt", "--scores-a", (dir / "scores_none.txt").string(), "--scores-b",
                  (dir / "scores_combined_a.txt").string()},
                 log, &mcn) == 0;
  if (!mcn.empty() && mcn.back() == '\n') mcn.pop_back();

  const double total_train = train_secs[0] + train_secs[1];
  const bool ok = ran && staged_matches && final_epoch[0].accuracy > 0.9 && final_epoch[1].accuracy > 0.9 && eers[0] >= 0.0 &&
                  eers[0] < 0.25 && eers[1] >= 0.0 && eers[1] < 0.25 && mcn.rfind("MCNEMAR ", 0) == 0 && total_train < 600.0;
  report(6, ok,
         fmt("end-to-end: train acc none %.3f / combined_a %.3f, EER none %.4f / combined_a %.4f, training %.0f s + %.0f s, "
             "staged embed %s, %s",
             final_epoch[0].accuracy, final_epoch[1].accuracy, eers[0], eers[1], train_secs[0], train_secs[1],
             staged_matches ? "bit-identical" : "DIFFERS", mcn.empty() ? "mcnemar failed" : mcn.c_str()));
}

// ---- 7 -------------------------------------------------------------------------

void receptive_field() {
  ModelConfig cfg;
  cfg.n_speakers = 10;
  cfg.variant = Variant::combined_a;
  const auto model = init_model<float>(cfg, 7);
  std::mt19937_64 rng(7);
  bool counts = true;
  for (int t = 15; t <= 64; ++t) {
    ForwardCache<float> cache;
    forward<float>(testutil::random_matrix(t, 30, rng).cast<float>(), Vec<float>::Ones(t), model, &cache);
    counts &= cache.act[4].rows() == t - 14 && cache.pool.alphas.size() == t - 14;
  }
  bool too_short = false;
  try {
    forward<float>(Mat<float>::Zero(14, 30), Vec<float>::Ones(14), model);
  } catch (const Error& e) {
    too_short = e.kind() == ErrorKind::UtteranceTooShort;
  }
  report(7, counts && too_short,
         fmt("receptive field: pooled count = T - 14 for T in 15..64 %s; T = 14 -> UtteranceTooShort %s", counts ? "yes" : "no",
             too_short ? "yes" : "no"));
}

// ---- 8 -------------------------------------------------------------------------

void determinism(const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream log(dir / "commands.log");
  {
    std::ofstream cfg(dir / "tiny.cfg");
    cfg << "batch_size = 8\nepochs = 3\nchunk_len_frames = 100\n"
           "l1_dim = 32\nl2_dim = 32\nl3_dim = 32\nl4_dim = 32\nl5_dim = 64\nl6_dim = 32\nl7_dim = 32\nattention_dim = 16\n";
  }
  bool ran = cli_run({"synth", "--speakers", "3", "--utts", "4", "--frames", "200", "--heldout-utts", "0", "--trials", "0",
                      "--seed", "8", "--out", (dir / "data").string()},
                     log) == 0;
  for (const char* name : {"a.bin", "b.bin"}) {
    ran &= cli_run({"train", "--data", (dir / "data").string(), "--config", (dir / "tiny.cfg").string(), "--variant",
                    "combined_b", "--seed", "42", "--out", (dir / name).string()},
                   log) == 0;
  }
  const std::string a = slurp(dir / "a.bin"), b = slurp(dir / "b.bin");
  report(8, ran && !a.empty() && a == b,
         fmt("determinism: two seeded train runs -> model files %s (%zu bytes)", a == b ? "bit-identical" : "DIFFER", a.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vfrpool acceptance criteria"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "scratch directory for the end-to-end runs");
  app.add_option("--only", only, "run just these criteria");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);

  auto want = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
  const auto t0 = Clock::now();
  try {
    if (want(1)) gradient_suite();
    if (want(2)) pooling_reduction();
    if (want(3)) vfr_bounds();
    if (want(4)) equalization();
    if (want(5)) closed_forms();
    if (want(6)) end_to_end(workdir);
    if (want(7)) receptive_field();
    if (want(8)) determinism(workdir);
  } catch (const std::exception& e) {
    std::printf("[FAIL] aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d failure(s), %.0f s\n", failures, seconds_since(t0));
  return failures == 0 ? 0 : 1;
}
