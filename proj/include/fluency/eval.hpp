#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "fluency/audio.hpp"
#include "fluency/config.hpp"
#include "fluency/embeddings.hpp"
#include "fluency/error.hpp"
#include "fluency/features.hpp"
#include "fluency/metrics.hpp"
#include "fluency/model.hpp"
#include "fluency/random.hpp"
#include "fluency/segmentation.hpp"

namespace fluency {

// ---------------------------------------------------------------------------
// Labels

enum class FluencyLabel : int { Low = 0, Medium = 1, High = 2 };

/// 0-5 Low, 6-7 Medium, 8-10 High.
inline FluencyLabel bucket_score(int score) {
  if (score < 0 || score > 10) throw Error(Errc::OutOfRange, "fluency score " + std::to_string(score) + " outside 0-10");
  if (score <= 5) return FluencyLabel::Low;
  if (score <= 7) return FluencyLabel::Medium;
  return FluencyLabel::High;
}

inline int parse_label(const nlohmann::json& raw) {
  if (raw.is_number_integer()) return static_cast<int>(bucket_score(raw.get<int>()));
  if (raw.is_number()) {
    const double v = raw.get<double>();
    if (v != std::floor(v)) throw Error(Errc::OutOfRange, "fractional fluency score");
    return static_cast<int>(bucket_score(static_cast<int>(v)));
  }
  if (!raw.is_string()) throw Error(Errc::InvalidConfig, "label must be a 0-10 score or a class name");
  std::string s;
  for (char ch : raw.get<std::string>()) s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  if (s.rfind("low", 0) == 0) return 0;
  if (s.rfind("medium", 0) == 0 || s.rfind("intermediate", 0) == 0) return 1;
  if (s.rfind("high", 0) == 0) return 2;
  throw Error(Errc::InvalidConfig, "unknown label '" + raw.get<std::string>() + "'");
}

// ---------------------------------------------------------------------------
// Manifest

struct ManifestEntry {
  std::string id;
  std::filesystem::path audio;
  nlohmann::json label_raw;
  int label = 0;
  std::string transcript;
  std::vector<WordTime> word_times;
  std::string split;  // optional: "train" / "test"

  Transcript transcript_tokens() const {
    Transcript tr;
    tr.tokens = tokenize(transcript);
    tr.word_times = word_times;
    return tr;
  }
};

/// JSON Lines: {"id", "audio", "label", "transcript", "word_times"?, "split"?}.
/// Relative audio paths resolve against the manifest's directory.
inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::MissingFile, path.string());
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedJson, where + ": " + e.what());
    }
    ManifestEntry e;
    try {
      e.id = j.at("id").get<std::string>();
      e.audio = j.at("audio").get<std::string>();
      e.label_raw = j.at("label");
      e.transcript = j.value("transcript", "");
      if (j.contains("word_times") && !j["word_times"].is_null()) {
        for (const auto& w : j["word_times"]) {
          if (w.is_array()) {
            e.word_times.push_back({w.at(0).get<double>(), w.at(1).get<double>()});
          } else {
            e.word_times.push_back({w.at("start").get<double>(), w.at("end").get<double>()});
          }
        }
      }
      e.split = j.value("split", "");
    } catch (const nlohmann::json::exception& ex) {
      throw Error(Errc::MalformedJson, where + ": " + ex.what());
    }
    e.label = parse_label(e.label_raw);
    if (e.audio.is_relative()) e.audio = path.parent_path() / e.audio;
    if (!ids.insert(e.id).second) throw Error(Errc::InvalidConfig, where + ": duplicate id " + e.id);
    out.push_back(std::move(e));
  }
  return out;
}

/// Class names as the corpus spells them (Intermediate vs Medium).
inline std::vector<std::string> label_names(const std::vector<ManifestEntry>& entries) {
  for (const auto& e : entries) {
    if (e.label_raw.is_string()) {
      std::string s = e.label_raw.get<std::string>();
      for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
      if (s.rfind("intermediate", 0) == 0) return {"Low", "Intermediate", "High"};
    }
  }
  return {"Low", "Medium", "High"};
}

// ---------------------------------------------------------------------------
// Cross-validation

struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified k-fold. Each class is shuffled and dealt round-robin, with the
/// dealing position carried across classes so fold sizes stay balanced.
inline std::vector<FoldSplit> kfold_split(const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw Error(Errc::InvalidConfig, "k must be >= 2");
  if (labels.size() < static_cast<std::size_t>(k)) {
    throw Error(Errc::TooFewSamples, std::to_string(labels.size()) + " samples for " + std::to_string(k) + " folds");
  }
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  SplitMix64 rng(seed ^ 0x5851F42D4C957F2DULL);
  std::vector<std::vector<std::size_t>> fold_members(static_cast<std::size_t>(k));
  std::size_t cursor = 0;
  for (auto& [label, idx] : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    for (std::size_t i : idx) fold_members[cursor++ % static_cast<std::size_t>(k)].push_back(i);
  }
  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (std::size_t f = 0; f < folds.size(); ++f) {
    folds[f].test = fold_members[f];
    std::sort(folds[f].test.begin(), folds[f].test.end());
    for (std::size_t g = 0; g < folds.size(); ++g) {
      if (g != f) folds[f].train.insert(folds[f].train.end(), fold_members[g].begin(), fold_members[g].end());
    }
    std::sort(folds[f].train.begin(), folds[f].train.end());
  }
  return folds;
}

// ---------------------------------------------------------------------------
// Per-utterance pipeline

inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (int w = 0; w < jobs; ++w) {
    workers.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
}

using ExternalVad = std::map<std::string, std::vector<SpeechRegion>>;

/// Regions handed to breath-group chunking: the external VAD's regions when
/// given, else the energy VAD's speech extent. Energy regions already break at
/// every pause longer than bridge_ms, so chunking them directly would leave
/// delta nothing to decide.
inline std::vector<SpeechRegion> speech_regions(const AudioBuffer& audio, const VadConfig& vad, const ExternalVad* external) {
  if (external != nullptr) {
    const auto it = external->find(audio.id);
    if (it == external->end()) throw Error(Errc::MissingFile, audio.id + ": no entry in external VAD file");
    return it->second;
  }
  return speech_extent(detect_speech(audio, vad));
}

/// Breath-group chunks, or one whole-utterance chunk when chunking is off.
inline std::vector<Chunk> segment_utterance(const AudioBuffer& audio, const RunConfig& cfg, const ExternalVad* external,
                                            double delta_ms) {
  if (!cfg.chunking) return {{audio.id, 0, 0.0, audio.duration_seconds()}};
  return chunk_breath_groups(audio, speech_regions(audio, cfg.vad, external), delta_ms, cfg.vad);
}

struct Utterance {
  const ManifestEntry* entry = nullptr;
  AudioBuffer audio;
  std::vector<FrameEmbedding> embeddings;  // one per configured model
};

struct Dataset {
  std::vector<Sample> samples;
  std::vector<std::string> skipped;
  std::vector<std::string> warnings;
};

/// Turns utterances into classifier samples: chunk, compute markers, pool
/// each model's frames per chunk. Chunks without frames in some model are
/// dropped; utterances left with no chunks are skipped.
inline Dataset build_dataset(const std::vector<Utterance>& utts, const RunConfig& cfg, const ExternalVad* external,
                             double delta_ms) {
  Dataset ds;
  Eigen::Index target = cfg.target_dim;
  for (const auto& u : utts) {
    for (const auto& fe : u.embeddings) target = std::max<Eigen::Index>(target, cfg.target_dim > 0 ? cfg.target_dim : fe.dim());
  }
  const MarkerOptions mopts{cfg.ngram_order, cfg.vq_markers};
  for (const auto& u : utts) {
    std::vector<Chunk> chunks;
    if (u.entry == nullptr) continue;
    try {
      chunks = segment_utterance(u.audio, cfg, external, delta_ms);
    } catch (const Error& e) {
      if (e.code() != Errc::TooShortInput) throw;
      ds.warnings.push_back(e.what());
    }
    const auto feats = compute_chunk_features(u.audio, u.entry->transcript_tokens(), chunks, mopts);
    std::vector<std::vector<Vector>> pooled;  // per kept chunk, per model
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < chunks.size(); ++c) {
      std::vector<Vector> per_model;
      bool empty = false;
      for (const auto& fe : u.embeddings) {
        try {
          per_model.push_back(mean_pool(slice_frames(fe, chunks[c])));
        } catch (const Error& e) {
          if (e.code() != Errc::EmptyChunkFrames) throw;
          empty = true;
          break;
        }
      }
      if (empty) {
        ds.warnings.push_back(u.audio.id + ": chunk " + std::to_string(c) + " has no embedding frames, skipped");
        continue;
      }
      pooled.push_back(project_to_common(per_model, target));
      kept.push_back(c);
    }
    if (kept.empty()) {
      ds.skipped.push_back(u.audio.id);
      ds.warnings.push_back(u.audio.id + ": no usable chunks, utterance skipped");
      continue;
    }
    Sample s;
    s.id = u.audio.id;
    s.label = u.entry->label;
    const auto m = static_cast<Eigen::Index>(kept.size());
    for (std::size_t src = 0; src < u.embeddings.size(); ++src) {
      Matrix mat(m, target);
      for (Eigen::Index r = 0; r < m; ++r) mat.row(r) = pooled[static_cast<std::size_t>(r)][src].transpose();
      s.sources.push_back(std::move(mat));
    }
    const std::size_t k = cfg.markers ? (cfg.vq_markers ? kMarkerCount + 5 : kMarkerCount) : 0;
    s.markers = Matrix::Zero(m, static_cast<Eigen::Index>(k));
    if (k > 0) {
      for (Eigen::Index r = 0; r < m; ++r) {
        const auto v = marker_vector(feats[kept[static_cast<std::size_t>(r)]], cfg.vq_markers);
        for (std::size_t j = 0; j < k; ++j) s.markers(r, static_cast<Eigen::Index>(j)) = v[j];
      }
    }
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline std::unique_ptr<EmbeddingSource> make_source(const RunConfig& cfg) {
  if (cfg.emb == "mock") return std::make_unique<MockSource>(cfg.mock_dim, cfg.model.seed);
  return std::make_unique<FebDirectorySource>(cfg.emb);
}

/// Loads audio and frame embeddings for every manifest entry.
inline std::vector<Utterance> load_utterances(const std::vector<ManifestEntry>& entries, const EmbeddingSource& source,
                                              const RunConfig& cfg) {
  std::vector<Utterance> utts(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    utts[i].entry = &entries[i];
    utts[i].audio = prepare_audio(entries[i].audio, entries[i].id);
    for (const auto& model : cfg.models) utts[i].embeddings.push_back(source.embed(model, utts[i].audio));
  });
  return utts;
}

// ---------------------------------------------------------------------------
// Experiments

struct FoldResult {
  int fold = 0;
  std::size_t train_size = 0;
  std::size_t test_size = 0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::optional<double> pcc;
  std::vector<double> alpha;
  int epochs_run = 0;
  double final_train_loss = 0.0;
  double final_train_f1 = 0.0;
};

struct ExperimentReport {
  std::string condition = "fusion+chunking";
  std::string protocol;
  std::string embedding_source;
  std::vector<std::string> label_names{"Low", "Medium", "High"};
  std::vector<FoldResult> folds;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  std::optional<double> pcc;
  std::vector<double> alpha;
  ConfusionMatrix confusion;
  std::size_t evaluated = 0;
  std::size_t skipped = 0;
  std::vector<std::string> skipped_ids;
  std::string fingerprint;
  double runtime_seconds = 0.0;
};

inline nlohmann::json reference_targets() {
  return {{"note", "published full-scale results with fine-tuned SSL models; recorded for comparison, not asserted"},
          {"speechocean762", {{"f1", 0.825}, {"pcc", 0.796}}},
          {"avalinguo", {{"f1", 0.969}, {"pcc", 0.963}}}};
}

inline nlohmann::json to_json(const ExperimentReport& r, bool include_runtime = true) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json folds = nlohmann::json::array();
  for (const auto& f : r.folds) {
    folds.push_back({{"fold", f.fold},
                     {"train_size", f.train_size},
                     {"test_size", f.test_size},
                     {"macro_f1", f.macro_f1},
                     {"micro_f1", f.micro_f1},
                     {"pcc", opt(f.pcc)},
                     {"alpha", f.alpha},
                     {"epochs_run", f.epochs_run},
                     {"final_train_loss", f.final_train_loss},
                     {"final_train_f1", f.final_train_f1}});
  }
  nlohmann::json j = {{"condition", r.condition},
                      {"protocol", r.protocol},
                      {"embedding_source", r.embedding_source},
                      {"ssl_mode", r.embedding_source.rfind("mock", 0) == 0 ? "mock" : "frozen-SSL"},
                      {"label_names", r.label_names},
                      {"folds", folds},
                      {"macro_f1", r.macro_f1},
                      {"micro_f1", r.micro_f1},
                      {"pcc", opt(r.pcc)},
                      {"alpha", r.alpha},
                      {"confusion", r.confusion},
                      {"evaluated", r.evaluated},
                      {"skipped", r.skipped},
                      {"skipped_ids", r.skipped_ids},
                      {"config_fingerprint", r.fingerprint},
                      {"reference_targets", reference_targets()}};
  if (include_runtime) j["runtime_seconds"] = r.runtime_seconds;
  return j;
}

/// Train/test over folds (cv) or the manifest's fixed split, aggregating
/// fold metrics by their mean.
inline ExperimentReport evaluate_dataset(const Dataset& ds, const std::vector<ManifestEntry>& entries, const RunConfig& cfg,
                                         const std::string& condition) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentReport report;
  report.condition = condition;
  report.protocol = cfg.protocol;
  report.label_names = label_names(entries);
  report.skipped = ds.skipped.size();
  report.skipped_ids = ds.skipped;
  report.evaluated = ds.samples.size();
  report.fingerprint = config_fingerprint(cfg);
  report.confusion.assign(static_cast<std::size_t>(cfg.model.classes), std::vector<long>(static_cast<std::size_t>(cfg.model.classes), 0));
  if (ds.samples.empty()) throw Error(Errc::EmptyDataset, "no utterance produced usable chunks");

  std::vector<FoldSplit> splits;
  if (cfg.protocol == "cv") {
    std::vector<int> labels;
    for (const auto& s : ds.samples) labels.push_back(s.label);
    splits = kfold_split(labels, cfg.folds, cfg.model.seed);
  } else {
    std::map<std::string, std::string> split_of;
    for (const auto& e : entries) split_of[e.id] = e.split;
    FoldSplit fs;
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      const auto& s = split_of[ds.samples[i].id];
      if (s == "train") {
        fs.train.push_back(i);
      } else if (s == "test") {
        fs.test.push_back(i);
      } else {
        throw Error(Errc::InvalidConfig, ds.samples[i].id + ": split protocol needs \"split\": \"train\"|\"test\"");
      }
    }
    if (fs.train.empty() || fs.test.empty()) throw Error(Errc::TooFewSamples, "split protocol needs train and test entries");
    splits.push_back(std::move(fs));
  }

  std::vector<double> alpha_sum;
  double pcc_sum = 0.0;
  int pcc_count = 0;
  for (std::size_t f = 0; f < splits.size(); ++f) {
    std::vector<Sample> train_set;
    std::vector<Sample> test_set;
    for (auto i : splits[f].train) train_set.push_back(ds.samples[i]);
    for (auto i : splits[f].test) test_set.push_back(ds.samples[i]);
    TrainResult tr = train(train_set, cfg.model);
    tr.model.source_names = cfg.models;
    const auto preds = predict_all(tr.model, test_set);
    std::vector<int> predicted;
    std::vector<int> truth;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      predicted.push_back(preds[i].label);
      truth.push_back(test_set[i].label);
      ++report.confusion[static_cast<std::size_t>(truth.back())][static_cast<std::size_t>(predicted.back())];
    }
    FoldResult fr;
    fr.fold = static_cast<int>(f);
    fr.train_size = train_set.size();
    fr.test_size = test_set.size();
    fr.macro_f1 = macro_f1(predicted, truth, cfg.model.classes);
    fr.micro_f1 = micro_f1(predicted, truth);
    fr.pcc = test_set.size() >= 2 ? pearson_or_null(predicted, truth) : std::nullopt;
    const Vector a = tr.model.network.alpha();
    fr.alpha.assign(a.data(), a.data() + a.size());
    fr.epochs_run = static_cast<int>(tr.history.size());
    fr.final_train_loss = tr.history.back().loss;
    fr.final_train_f1 = tr.history.back().train_macro_f1;
    if (alpha_sum.empty()) alpha_sum.assign(fr.alpha.size(), 0.0);
    for (std::size_t j = 0; j < fr.alpha.size(); ++j) alpha_sum[j] += fr.alpha[j];
    if (fr.pcc) {
      pcc_sum += *fr.pcc;
      ++pcc_count;
    }
    report.macro_f1 += fr.macro_f1;
    report.micro_f1 += fr.micro_f1;
    report.folds.push_back(std::move(fr));
  }
  const double n = static_cast<double>(report.folds.size());
  report.macro_f1 /= n;
  report.micro_f1 /= n;
  if (pcc_count > 0) report.pcc = pcc_sum / pcc_count;
  for (double& a : alpha_sum) a /= n;
  report.alpha = alpha_sum;
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

/// The full pipeline condition: breath-group chunking, learned fusion, markers.
inline ExperimentReport run_experiment(const std::vector<ManifestEntry>& entries, const EmbeddingSource& source,
                                       const RunConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  std::optional<ExternalVad> external;
  if (!cfg.vad_json.empty()) external = load_external_vad(cfg.vad_json);
  const auto utts = load_utterances(entries, source, cfg);
  const Dataset ds = build_dataset(utts, cfg, external ? &*external : nullptr, cfg.delta_ms);
  if (log != nullptr) {
    for (const auto& w : ds.warnings) *log << "warning: " << w << '\n';
  }
  ExperimentReport report = evaluate_dataset(ds, entries, cfg, cfg.chunking ? "fusion+chunking" : "no-chunking");
  report.embedding_source = source.describe();
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline std::vector<std::string> ablation_conditions(const RunConfig& cfg) {
  std::vector<std::string> names{"full"};
  for (const auto& m : cfg.models) names.push_back("single:" + m);
  names.push_back("no-chunking");
  names.push_back("no-markers");
  return names;
}

/// Runs the requested ablation conditions (all by default) on identical folds
/// and seeds: full, single-source one-hot alpha per model, whole-utterance
/// chunks, and no markers.
inline std::vector<ExperimentReport> run_ablation(const std::vector<ManifestEntry>& entries, const EmbeddingSource& source,
                                                  const RunConfig& cfg, std::vector<std::string> conditions = {},
                                                  std::ostream* log = nullptr) {
  cfg.validate();
  if (conditions.empty()) conditions = ablation_conditions(cfg);
  std::optional<ExternalVad> external;
  if (!cfg.vad_json.empty()) external = load_external_vad(cfg.vad_json);
  const auto utts = load_utterances(entries, source, cfg);
  const ExternalVad* ext = external ? &*external : nullptr;

  std::optional<Dataset> chunked;
  auto get_chunked = [&]() -> const Dataset& {
    if (!chunked) {
      chunked = build_dataset(utts, cfg, ext, cfg.delta_ms);
      if (log != nullptr) {
        for (const auto& w : chunked->warnings) *log << "warning: " << w << '\n';
      }
    }
    return *chunked;
  };

  std::vector<ExperimentReport> reports;
  for (const auto& cond : conditions) {
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig c = cfg;
    ExperimentReport r;
    if (cond == "full") {
      r = evaluate_dataset(get_chunked(), entries, c, cond);
    } else if (cond.rfind("single:", 0) == 0) {
      const auto name = cond.substr(7);
      const auto it = std::find(cfg.models.begin(), cfg.models.end(), name);
      if (it == cfg.models.end()) throw Error(Errc::InvalidConfig, "unknown model in condition " + cond);
      c.model.single_source = static_cast<int>(it - cfg.models.begin());
      r = evaluate_dataset(get_chunked(), entries, c, cond);
    } else if (cond == "no-chunking") {
      c.chunking = false;
      r = evaluate_dataset(build_dataset(utts, c, ext, c.delta_ms), entries, c, cond);
    } else if (cond == "no-markers") {
      c.markers = false;
      Dataset d = get_chunked();
      for (auto& s : d.samples) s.markers = Matrix::Zero(s.chunks(), 0);
      r = evaluate_dataset(d, entries, c, cond);
    } else {
      throw Error(Errc::InvalidConfig, "unknown ablation condition " + cond);
    }
    r.embedding_source = source.describe();
    r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (log != nullptr) *log << "condition " << cond << ": macro-F1 " << r.macro_f1 << '\n';
    reports.push_back(std::move(r));
  }
  return reports;
}

inline void write_summary_csv(std::ostream& out, const std::vector<ExperimentReport>& reports) {
  out << "condition,macro_f1,micro_f1,pcc,alpha,evaluated,skipped\n";
  for (const auto& r : reports) {
    std::string alpha;
    for (std::size_t i = 0; i < r.alpha.size(); ++i) {
      char b[32];
      std::snprintf(b, sizeof b, "%s%.6f", i ? ";" : "", r.alpha[i]);
      alpha += b;
    }
    char line[256];
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,", r.condition.c_str(), r.macro_f1, r.micro_f1);
    out << line;
    if (r.pcc) {
      std::snprintf(line, sizeof line, "%.6f", *r.pcc);
      out << line;
    }
    out << ',' << alpha << ',' << r.evaluated << ',' << r.skipped << '\n';
  }
}

}  // namespace fluency
