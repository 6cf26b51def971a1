#pragma once

// Command implementations behind the vfrpool executable. Kept in a header so
// the acceptance suite can drive the exact same code in-process.

#include "vfrpool/vfrpool.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace vfrpool::cli {

namespace fs = std::filesystem;

// ---- dataset tree -----------------------------------------------------------
//
//   DIR/speakers.txt   one speaker name per line, line order = label
//   DIR/train.list     "<utterance_id> <speaker_name>"
//   DIR/heldout.list   same format
//   DIR/trials.txt     trials over the held-out utterances
//   DIR/wav/<id>.wav

struct ListEntry {
  std::string id;
  std::string speaker;
};

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path.string() + "'");
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) {
    const auto f = detail::fields(line);
    if (!f.empty()) out.push_back(line);
  }
  return out;
}

inline std::vector<ListEntry> read_list(const fs::path& path) {
  std::vector<ListEntry> out;
  for (const auto& line : read_lines(path)) {
    const auto f = detail::fields(line);
    if (f.size() != 2) throw Error(ErrorKind::ParseError, "'" + path.string() + "': expected '<id> <speaker>' in '" + line + "'");
    out.push_back({f[0], f[1]});
  }
  return out;
}

inline void write_synth_tree(const fs::path& dir, const SynthCorpus& corpus, const TrialList& trials) {
  fs::create_directories(dir / "wav");
  std::ofstream speakers(dir / "speakers.txt"), train(dir / "train.list"), heldout(dir / "heldout.list");
  if (!speakers || !train || !heldout) throw Error(ErrorKind::IoError, "cannot write dataset tree under '" + dir.string() + "'");
  for (const auto& name : corpus.speaker_names) speakers << name << '\n';
  for (const auto& u : corpus.train) {
    train << u.id << ' ' << corpus.speaker_names[u.speaker] << '\n';
    write_wav((dir / "wav" / (u.id + ".wav")).string(), u.audio);
  }
  for (const auto& u : corpus.heldout) {
    heldout << u.id << ' ' << corpus.speaker_names[u.speaker] << '\n';
    write_wav((dir / "wav" / (u.id + ".wav")).string(), u.audio);
  }
  write_trials((dir / "trials.txt").string(), trials);
}

inline Dataset load_dataset(const fs::path& dir, bool normalize) {
  Dataset data;
  std::map<std::string, int> label;
  for (const auto& line : read_lines(dir / "speakers.txt")) {
    const auto f = detail::fields(line);
    if (f.size() != 1) throw Error(ErrorKind::ParseError, "speakers.txt: one name per line");
    if (!label.emplace(f[0], static_cast<int>(data.speakers.size())).second) {
      throw Error(ErrorKind::ParseError, "speakers.txt: duplicate speaker '" + f[0] + "'");
    }
    data.speakers.push_back(f[0]);
  }
  for (const auto& e : read_list(dir / "train.list")) {
    const auto it = label.find(e.speaker);
    if (it == label.end()) throw Error(ErrorKind::LabelOutOfRange, "utterance '" + e.id + "' has unknown speaker '" + e.speaker + "'");
    UtteranceFeatures f = analyze_utterance(load_wav((dir / "wav" / (e.id + ".wav")).string()), normalize);
    data.utterances.push_back({e.id, std::move(f.feats), std::move(f.conditioning), it->second});
  }
  return data;
}

// ---- per-file helpers -------------------------------------------------------

// Maps a file or a directory of `in_ext` files onto outputs. For a directory
// input the output is a directory receiving `<stem><out_ext>` per file.
inline void for_each_input(const std::string& in, const std::string& out, const std::string& in_ext,
                           const std::string& out_ext, const std::function<void(const fs::path&, const fs::path&)>& fn) {
  if (!fs::is_directory(in)) {
    fn(in, out);
    return;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(in)) {
    if (entry.is_regular_file() && entry.path().extension() == in_ext) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  fs::create_directories(out);
  for (const auto& f : files) fn(f, fs::path(out) / (f.stem().string() + out_ext));
}

inline void write_conditioning_csv(const std::string& path, const ConditioningVector& c) {
  std::vector<int> frames(static_cast<std::size_t>(c.size()));
  std::vector<double> values(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    frames[i] = static_cast<int>(i);
    values[i] = c.values[static_cast<Eigen::Index>(i)];
  }
  write_pairs_csv(path, "frame", "c", frames, values);
}

inline ConditioningVector read_conditioning_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::IoError, "cannot open '" + path + "'");
  std::string line;
  if (!std::getline(is, line) || line.rfind("frame,c", 0) != 0) throw Error(ErrorKind::ParseError, "'" + path + "': expected header 'frame,c'");
  std::vector<double> values;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(ErrorKind::ParseError, "'" + path + "': bad row '" + line + "'");
    try {
      values.push_back(std::stod(line.substr(comma + 1)));
    } catch (const std::exception&) {
      throw Error(ErrorKind::ParseError, "'" + path + "': bad value in '" + line + "'");
    }
  }
  ConditioningVector c;
  c.values = Eigen::Map<VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  return c;
}

inline std::map<std::string, VectorXd> load_embeddings(const fs::path& dir) {
  std::map<std::string, VectorXd> out;
  std::vector<fs::path> files;
  if (fs::is_directory(dir)) {
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
    }
  } else {
    files.push_back(dir);
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    for (auto& e : read_embedding_csv(f.string())) out[e.utterance_id] = std::move(e.vector);
  }
  return out;
}

template <typename S>
SpeakerEmbedding embed_one(const Model<S>& model, const MfccMatrix& feats, const ConditioningVector& c, const std::string& id,
                           const std::string& alpha_csv) {
  const Mat<S> x = feats.frames.template cast<S>();
  ForwardCache<S> cache;
  forward<S>(x, c.values.template cast<S>(), model, &cache);
  if (!alpha_csv.empty()) {
    const Vec<S>& a = cache.pool.alphas;
    std::vector<int> frames(static_cast<std::size_t>(a.size()));
    std::vector<double> weights(frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) {
      frames[i] = static_cast<int>(i) + model.config.left_context();
      weights[i] = static_cast<double>(a[static_cast<Eigen::Index>(i)]);
    }
    write_pairs_csv(alpha_csv, "frame", "weight", frames, weights);
  }
  return {id, cache.z6.template cast<double>()};
}

// ---- commands ---------------------------------------------------------------

struct Streams {
  std::ostream& out;
  std::ostream& err;
};

inline int run(int argc, const char* const* argv, Streams io) {
  CLI::App app{"Speaker embeddings with VFR-conditioned attentive statistics pooling", "vfrpool"};
  app.require_subcommand(1);

  std::string wav, out, cond, feats, entropy_csv, mask_csv, data_dir, config_path, variant_name = "none", model_path;
  std::string trials_path, scores_path, scores_a, scores_b, embeds_dir, alpha_csv, det_csv;
  bool no_norm = false;
  std::uint64_t seed = 0;
  int speakers = 10, utts = 8, frames = 500, heldout = 2, n_trials = 200;

  auto* extract = app.add_subcommand("extract", "MFCC features (SPF1)");
  extract->add_option("--wav", wav, "input WAV or directory")->required();
  extract->add_option("--out", out, "output SPF1 file or directory")->required();
  extract->add_flag("--no-norm", no_norm, "skip sliding mean normalization");

  auto* vfr = app.add_subcommand("vfr", "VFR conditioning vector");
  vfr->add_option("--wav", wav, "input WAV or directory")->required();
  vfr->add_option("--cond", cond, "output conditioning CSV or directory")->required();
  vfr->add_option("--entropy-csv", entropy_csv, "entropy curve CSV");
  vfr->add_option("--mask-csv", mask_csv, "pick mask CSV");

  auto* synth = app.add_subcommand("synth", "synthetic speaker dataset");
  synth->add_option("--speakers", speakers)->check(CLI::PositiveNumber);
  synth->add_option("--utts", utts, "training utterances per speaker")->check(CLI::PositiveNumber);
  synth->add_option("--frames", frames, "MFCC frames per utterance")->check(CLI::PositiveNumber);
  synth->add_option("--heldout-utts", heldout, "held-out utterances per speaker")->check(CLI::NonNegativeNumber);
  synth->add_option("--trials", n_trials, "held-out trials to draw")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", seed);
  synth->add_option("--out", out)->required();

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--data", data_dir, "dataset tree")->required();
  train_cmd->add_option("--config", config_path, "key = value config file")->required();
  train_cmd->add_option("--variant", variant_name, "none|concat|gate|affine|combined_a|combined_b|vfr_weights");
  train_cmd->add_option("--out", model_path, "output SPM1 model")->required();
  auto* train_seed = train_cmd->add_option("--seed", seed, "overrides the config seed");
  train_cmd->add_flag("--no-norm", no_norm, "skip sliding mean normalization");

  auto* embed = app.add_subcommand("embed", "speaker embeddings");
  embed->add_option("--model", model_path)->required();
  auto* embed_wav = embed->add_option("--wav", wav, "input WAV or directory");
  auto* embed_feats = embed->add_option("--feats", feats, "SPF1 features from extract");
  auto* embed_cond = embed->add_option("--cond", cond, "conditioning CSV from vfr");
  embed_wav->excludes(embed_feats)->excludes(embed_cond);
  embed_feats->needs(embed_cond);
  embed_cond->needs(embed_feats);
  embed->add_option("--out", out, "embedding CSV or directory")->required();
  embed->add_option("--alpha-csv", alpha_csv, "attention weights CSV (single file only)");
  embed->add_flag("--no-norm", no_norm, "skip sliding mean normalization");

  auto* score = app.add_subcommand("score", "cosine trial scores");
  score->add_option("--trials", trials_path)->required();
  score->add_option("--embeds", embeds_dir, "directory of embedding CSVs")->required();
  score->add_option("--out", out)->required();

  auto* eer = app.add_subcommand("eer", "equal error rate");
  eer->add_option("--trials", trials_path)->required();
  eer->add_option("--scores", scores_path)->required();
  eer->add_option("--det-csv", det_csv, "operating points CSV");

  auto* mcn = app.add_subcommand("mcnemar", "paired significance test at each system's EER threshold");
  mcn->add_option("--trials", trials_path)->required();
  mcn->add_option("--scores-a", scores_a)->required();
  mcn->add_option("--scores-b", scores_b)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    io.out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    io.err << "usage error: " << e.what() << '\n';
    return 2;
  }

  try {
    if (*extract) {
      for_each_input(wav, out, ".wav", ".spf", [&](const fs::path& in, const fs::path& dst) {
        write_spf(dst.string(), extract_features(load_wav(in.string()), !no_norm).frames);
      });
    } else if (*vfr) {
      const bool dir = fs::is_directory(wav);
      for_each_input(wav, cond, ".wav", ".csv", [&](const fs::path& in, const fs::path& dst) {
        const AudioBuffer audio = load_wav(in.string());
        const VfrAnalysis a = analyze_vfr(audio);
        const auto t = num_frames(audio.samples.size(), kMfccFrames.frame_length(audio.sample_rate_hz),
                                  kMfccFrames.hop_length(audio.sample_rate_hz));
        write_conditioning_csv(dst.string(), align_conditioning(a.conditioning, t));
        auto side = [&](const std::string& opt) {
          if (!dir) return opt;
          fs::create_directories(opt);
          return (fs::path(opt) / (in.stem().string() + ".csv")).string();
        };
        if (!entropy_csv.empty()) {
          std::vector<double> ms, h;
          for (std::size_t i = 0; i < a.curve.size(); ++i) {
            ms.push_back(static_cast<double>(i) * a.curve.hop_ms);
            h.push_back(a.curve.values[i]);
          }
          write_pairs_csv(side(entropy_csv), "time_ms", "H", ms, h);
        }
        if (!mask_csv.empty()) {
          std::vector<std::size_t> idx;
          std::vector<int> bits;
          for (std::size_t i = 0; i < a.mask.size(); ++i) {
            idx.push_back(i);
            bits.push_back(a.mask.bits[i]);
          }
          write_pairs_csv(side(mask_csv), "index", "bit", idx, bits);
        }
      });
    } else if (*synth) {
      SynthConfig cfg;
      cfg.n_speakers = speakers;
      cfg.utts_per_speaker = utts;
      cfg.frames_per_utt = frames;
      cfg.heldout_per_speaker = heldout;
      cfg.seed = seed;
      const SynthCorpus corpus = synth_corpus(cfg);
      const TrialList trials = n_trials > 0 && corpus.heldout.size() >= 2 ? make_trials(corpus.heldout, n_trials, seed) : TrialList{};
      write_synth_tree(out, corpus, trials);
      io.out << corpus.train.size() << " training and " << corpus.heldout.size() << " held-out utterances, "
             << trials.size() << " trials\n";
    } else if (*train_cmd) {
      RunConfig rc = load_run_config(config_path);
      if (*train_seed) {
        rc.train.seed = seed;
        rc.model.seed = seed;
      }
      rc.model.variant = parse_variant(variant_name);
      const Dataset data = load_dataset(data_dir, !no_norm);
      rc.model.n_speakers = data.num_speakers();
      const Model<float> init = init_model<float>(rc.model, rc.model.seed);
      TrainOptions options;
      options.checkpoint_path = model_path;
      options.on_epoch = [&](const EpochLog& e) {
        char line[128];
        std::snprintf(line, sizeof line, "epoch %d loss %.6f accuracy %.4f\n", e.epoch, e.mean_loss, e.train_accuracy);
        io.out << line << std::flush;
      };
      const TrainResult<float> result = train<float>(data, rc.train, init, options);
      save_model(model_path, result.model);
      write_loss_log(model_path + ".loss.csv", result.log);
    } else if (*embed) {
      const Model<float> model = load_model<float>(model_path);
      if (!feats.empty()) {
        const MfccMatrix m{read_spf(feats), kMfccFrames.hop_ms, !no_norm};
        const std::string id = fs::path(feats).stem().string();
        write_embedding_csv(out, {embed_one(model, m, read_conditioning_csv(cond), id, alpha_csv)});
      } else if (!wav.empty()) {
        const bool dir = fs::is_directory(wav);
        for_each_input(wav, out, ".wav", ".csv", [&](const fs::path& in, const fs::path& dst) {
          const UtteranceFeatures f = analyze_utterance(load_wav(in.string()), !no_norm);
          write_embedding_csv(dst.string(), {embed_one(model, f.feats, f.conditioning, in.stem().string(), dir ? "" : alpha_csv)});
        });
      } else {
        io.err << "usage error: embed needs --wav or --feats with --cond\n";
        return 2;
      }
    } else if (*score) {
      const TrialList trials = read_trials(trials_path);
      const auto embeddings = load_embeddings(embeds_dir);
      ScoreSet s;
      for (const auto& t : trials) {
        const auto a = embeddings.find(t.enroll_id), b = embeddings.find(t.test_id);
        if (a == embeddings.end() || b == embeddings.end()) {
          throw Error(ErrorKind::LengthMismatch, "no embedding for trial " + t.enroll_id + " " + t.test_id);
        }
        s.scores.push_back(cosine_score(a->second, b->second));
      }
      write_scores(out, trials, s);
    } else if (*eer) {
      const TrialList trials = read_trials(trials_path);
      const ScoreSet s = read_scores(scores_path, trials);
      const EerResult r = compute_eer(trials, s);
      if (!det_csv.empty()) {
        std::ofstream os(det_csv);
        if (!os) throw Error(ErrorKind::IoError, "cannot open '" + det_csv + "' for writing");
        os << "threshold,far,frr\n" << std::setprecision(17);
        for (const auto& p : operating_points(trials, s)) os << p.threshold << ',' << p.far << ',' << p.frr << '\n';
      }
      char line[96];
      std::snprintf(line, sizeof line, "EER %.6f THRESHOLD %.17g\n", r.eer, r.threshold);
      io.out << line;
    } else if (*mcn) {
      const TrialList trials = read_trials(trials_path);
      const DecisionSet a = decisions_at_eer(trials, read_scores(scores_a, trials));
      const DecisionSet b = decisions_at_eer(trials, read_scores(scores_b, trials));
      const McNemarResult r = mcnemar(a, b, trials);
      char line[160];
      std::snprintf(line, sizeof line, "MCNEMAR %.6f N01 %d N10 %d %s\n", r.statistic, r.n01, r.n10,
                    r.significant_at_05 ? "significant" : "not-significant");
      io.out << line;
    }
  } catch (const Error& e) {
    io.err << "error: " << e.what() << '\n';
    return 1;
  } catch (const fs::filesystem_error& e) {
    io.err << "error: IoError: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    io.err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

inline int run(const std::vector<std::string>& args, Streams io) {
  std::vector<const char*> argv{"vfrpool"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), io);
}

}  // namespace vfrpool::cli
