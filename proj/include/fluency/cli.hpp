#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fluency/config.hpp"
#include "fluency/error.hpp"
#include "fluency/eval.hpp"

namespace fluency::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitValidation = 2;

/// Flags shared by every subcommand. Each one only overrides the config when
/// it was given on the command line.
struct Flags {
  std::string config_path;
  std::vector<std::pair<CLI::Option*, std::function<void(nlohmann::json&)>>> overrides;
  std::vector<std::shared_ptr<void>> storage;

  template <class T>
  void value(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    auto v = std::make_shared<T>();
    storage.push_back(v);
    CLI::Option* opt = app.add_option(flag, *v, help);
    overrides.emplace_back(opt, [key, v](nlohmann::json& j) { j[key] = *v; });
  }

  void toggle(CLI::App& app, const std::string& flag, const std::string& key, bool value_when_set, const std::string& help) {
    CLI::Option* opt = app.add_flag(flag, help);
    overrides.emplace_back(opt, [key, value_when_set](nlohmann::json& j) { j[key] = value_when_set; });
  }

  nlohmann::json given() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(j);
    }
    return j;
  }
};

inline void add_common_flags(CLI::App& app, Flags& f) {
  app.add_option("--config", f.config_path, "JSON or TOML config file (flags override it)")->check(CLI::ExistingFile);
  f.value<std::string>(app, "--manifest", "manifest", "JSON Lines manifest");
  f.value<std::string>(app, "--out", "out", "output file or directory");
  f.value<std::uint64_t>(app, "--seed", "seed", "global seed");
  f.value<int>(app, "--jobs", "jobs", "per-utterance worker threads");
  f.value<std::string>(app, "--emb", "emb", "embedding source: 'mock' or a FEB1 root (default $FLUENCY_EMB_DIR, else mock)");
  f.value<std::vector<std::string>>(app, "--models", "models", "embedding model ids, in fusion order");
  f.value<int>(app, "--mock-dim", "mock_dim", "mock embedding width");
  f.value<int>(app, "--target-dim", "target_dim", "common embedding width (0: widest model)");
  f.value<std::string>(app, "--vad-json", "vad_json", "external VAD regions (VAD-JSON) instead of energy VAD");
  f.value<double>(app, "--delta-ms", "delta_ms", "breath-group pause threshold in ms");
  f.value<std::vector<double>>(app, "--deltas", "deltas", "pause thresholds for sweep");
  f.value<double>(app, "--frame-ms", "frame_ms", "VAD frame length");
  f.value<double>(app, "--hop-ms", "hop_ms", "VAD hop");
  f.value<double>(app, "--energy-floor-db", "energy_floor_db", "absolute speech floor in dBFS");
  f.value<double>(app, "--relative-threshold-db", "relative_threshold_db", "speech threshold above the noise floor");
  f.value<double>(app, "--min-speech-ms", "min_speech_ms", "shortest speech region / chunk");
  f.value<double>(app, "--bridge-ms", "bridge_ms", "merge speech runs separated by less than this");
  f.toggle(app, "--vq-markers", "vq_markers", true, "append F0/shimmer/HNR to the marker vector");
  f.toggle(app, "--no-markers", "markers", false, "drop the fluency markers");
  f.toggle(app, "--no-chunking", "chunking", false, "treat each utterance as a single chunk");
  f.value<int>(app, "--ngram-order", "ngram_order", "n for the repetition marker");
  f.value<std::string>(app, "--protocol", "protocol", "cv (stratified k-fold) or split (manifest train/test)");
  f.value<int>(app, "--folds", "folds", "number of cross-validation folds");
  f.value<int>(app, "--epochs", "epochs", "training epochs");
  f.value<int>(app, "--batch-size", "batch_size", "mini-batch size");
  f.value<double>(app, "--learning-rate", "learning_rate", "Adam learning rate");
  f.value<int>(app, "--conv-filters", "conv_filters", "convolution filters");
  f.value<int>(app, "--kernel", "kernel", "convolution kernel (odd)");
  f.value<int>(app, "--lstm-layers", "lstm_layers", "BiLSTM layers");
  f.value<int>(app, "--lstm-hidden", "lstm_hidden", "BiLSTM hidden units per direction");
  f.value<double>(app, "--dropout", "dropout", "dropout probability");
  f.value<double>(app, "--target-train-f1", "target_train_f1", "stop once training macro-F1 reaches this (0: off)");
  f.value<std::string>(app, "--checkpoint", "checkpoint", "checkpoint directory");
}

/// defaults < $FLUENCY_EMB_DIR < config file < flags
inline RunConfig resolve_config(const Flags& f) {
  RunConfig cfg;
  if (const char* env = std::getenv("FLUENCY_EMB_DIR"); env != nullptr && *env != '\0') cfg.emb = env;
  if (!f.config_path.empty()) cfg = merge_config(cfg, read_config_file(f.config_path));
  cfg = merge_config(cfg, f.given());
  cfg.validate();
  return cfg;
}

inline void require(const std::string& value, const std::string& flag) {
  if (value.empty()) throw Error(Errc::InvalidConfig, flag + " is required");
}

/// Writes to the named file, or standard output for "" / "-".
inline void emit(const std::string& path, const std::function<void(std::ostream&)>& body) {
  if (path.empty() || path == "-") {
    body(std::cout);
    std::cout.flush();
    return;
  }
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error(Errc::Io, "cannot write " + path);
  body(out);
}

inline std::optional<ExternalVad> external_vad(const RunConfig& cfg) {
  if (cfg.vad_json.empty()) return std::nullopt;
  return load_external_vad(cfg.vad_json);
}

inline std::vector<ManifestEntry> entries_for(const std::vector<ManifestEntry>& all, const RunConfig& cfg, const std::string& split) {
  if (cfg.protocol != "split") return all;
  std::vector<ManifestEntry> out;
  for (const auto& e : all) {
    if (e.split == split) out.push_back(e);
  }
  if (out.empty()) throw Error(Errc::TooFewSamples, "no manifest entries with split \"" + split + "\"");
  return out;
}

struct Segmented {
  AudioBuffer audio;
  std::vector<Chunk> chunks;
};

inline std::vector<Segmented> segment_all(const std::vector<ManifestEntry>& entries, const RunConfig& cfg, double delta_ms) {
  const auto ext = external_vad(cfg);
  std::vector<Segmented> out(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    out[i].audio = prepare_audio(entries[i].audio, entries[i].id);
    out[i].chunks = segment_utterance(out[i].audio, cfg, ext ? &*ext : nullptr, delta_ms);
  });
  return out;
}

inline int cmd_segment(const RunConfig& cfg) {
  require(cfg.manifest, "--manifest");
  const auto entries = load_manifest(cfg.manifest);
  const auto seg = segment_all(entries, cfg, cfg.delta_ms);
  std::size_t total = 0;
  emit(cfg.out, [&](std::ostream& os) {
    os << "utterance_id,index,start,end\n";
    for (const auto& s : seg) {
      write_chunks_csv(os, s.chunks, false);
      total += s.chunks.size();
      if (s.chunks.empty()) std::cerr << "warning: " << s.audio.id << ": no speech chunks\n";
    }
  });
  std::cerr << "segment: " << seg.size() << " utterances, " << total << " chunks at delta " << cfg.delta_ms << " ms\n";
  return kExitOk;
}

inline int cmd_features(const RunConfig& cfg) {
  require(cfg.manifest, "--manifest");
  const auto entries = load_manifest(cfg.manifest);
  const auto seg = segment_all(entries, cfg, cfg.delta_ms);
  std::vector<std::vector<ChunkFeatures>> feats(seg.size());
  parallel_for(seg.size(), cfg.jobs, [&](std::size_t i) {
    feats[i] = compute_chunk_features(seg[i].audio, entries[i].transcript_tokens(), seg[i].chunks, {cfg.ngram_order, true});
  });
  emit(cfg.out, [&](std::ostream& os) {
    write_features_csv_header(os);
    for (std::size_t i = 0; i < seg.size(); ++i) write_features_csv_rows(os, seg[i].chunks, feats[i]);
  });
  return kExitOk;
}

inline Dataset dataset_for(const std::vector<ManifestEntry>& entries, const RunConfig& cfg,
                           std::vector<Utterance>* keep = nullptr) {
  const auto source = make_source(cfg);
  const auto ext = external_vad(cfg);
  auto utts = load_utterances(entries, *source, cfg);
  Dataset ds = build_dataset(utts, cfg, ext ? &*ext : nullptr, cfg.delta_ms);
  for (const auto& w : ds.warnings) std::cerr << "warning: " << w << '\n';
  if (keep != nullptr) *keep = std::move(utts);
  return ds;
}

inline int cmd_train(const RunConfig& cfg) {
  require(cfg.manifest, "--manifest");
  require(cfg.out, "--out");
  const auto all = load_manifest(cfg.manifest);
  const auto entries = entries_for(all, cfg, "train");
  const Dataset ds = dataset_for(entries, cfg);
  TrainResult tr = train(ds.samples, cfg.model);
  tr.model.source_names = cfg.models;
  tr.model.fingerprint = config_fingerprint(cfg);
  save_checkpoint(cfg.out, tr.model);
  nlohmann::json history = nlohmann::json::array();
  for (const auto& h : tr.history) {
    history.push_back({{"epoch", h.epoch}, {"loss", h.loss}, {"train_macro_f1", h.train_macro_f1}, {"alpha", h.alpha}});
  }
  nlohmann::json run = to_json(cfg);
  for (const char* k : {"manifest", "out", "checkpoint", "jobs"}) run.erase(k);
  std::ofstream(std::filesystem::path(cfg.out) / "history.json") << history.dump(2) << '\n';
  std::ofstream(std::filesystem::path(cfg.out) / "run_config.json") << run.dump(2) << '\n';
  const auto& last = tr.history.back();
  std::cerr << "train: " << ds.samples.size() << " utterances, " << tr.history.size() << " epochs, loss " << last.loss
            << ", train macro-F1 " << last.train_macro_f1 << '\n';
  return kExitOk;
}

/// Pipeline settings come from the checkpoint's run config; flags given on
/// the command line still win.
inline RunConfig config_from_checkpoint(const RunConfig& cli_cfg, const nlohmann::json& given) {
  const std::filesystem::path run_path = std::filesystem::path(cli_cfg.checkpoint) / "run_config.json";
  RunConfig cfg = cli_cfg;
  if (std::filesystem::exists(run_path)) {
    std::ifstream in(run_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedJson, run_path.string() + ": " + e.what());
    }
    j.erase("vad_json");
    cfg = merge_config(merge_config(cli_cfg, j), given);
  }
  cfg.validate();
  return cfg;
}

inline int cmd_eval(const RunConfig& cli_cfg, const nlohmann::json& given) {
  require(cli_cfg.manifest, "--manifest");
  const auto all = load_manifest(cli_cfg.manifest);
  if (cli_cfg.checkpoint.empty()) {
    const auto source = make_source(cli_cfg);
    const auto report = run_experiment(all, *source, cli_cfg, &std::cerr);
    emit(cli_cfg.out, [&](std::ostream& os) { os << to_json(report).dump(2) << '\n'; });
    std::cerr << "eval: macro-F1 " << report.macro_f1 << " over " << report.folds.size() << " fold(s)\n";
    return kExitOk;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const RunConfig cfg = config_from_checkpoint(cli_cfg, given);
  const TrainedModel model = load_checkpoint(cfg.checkpoint);
  const auto entries = entries_for(all, cfg, "test");
  const Dataset ds = dataset_for(entries, cfg);
  if (ds.samples.empty()) throw Error(Errc::EmptyDataset, "no utterance produced usable chunks");
  const auto preds = predict_all(model, ds.samples);
  std::vector<int> predicted;
  std::vector<int> truth;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    predicted.push_back(preds[i].label);
    truth.push_back(ds.samples[i].label);
  }
  ExperimentReport r;
  r.condition = "checkpoint";
  r.protocol = "held-out";
  r.embedding_source = make_source(cfg)->describe();
  r.label_names = label_names(all);
  r.evaluated = ds.samples.size();
  r.skipped = ds.skipped.size();
  r.skipped_ids = ds.skipped;
  r.fingerprint = model.fingerprint.empty() ? config_fingerprint(cfg) : model.fingerprint;
  r.confusion = confusion_matrix(predicted, truth, model.config.classes);
  FoldResult fr;
  fr.test_size = preds.size();
  fr.macro_f1 = macro_f1(predicted, truth, model.config.classes);
  fr.micro_f1 = micro_f1(predicted, truth);
  fr.pcc = preds.size() >= 2 ? pearson_or_null(predicted, truth) : std::nullopt;
  const Vector a = model.network.alpha();
  fr.alpha.assign(a.data(), a.data() + a.size());
  r.folds.push_back(fr);
  r.macro_f1 = fr.macro_f1;
  r.micro_f1 = fr.micro_f1;
  r.pcc = fr.pcc;
  r.alpha = fr.alpha;
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  emit(cfg.out, [&](std::ostream& os) { os << to_json(r).dump(2) << '\n'; });
  std::cerr << "eval: macro-F1 " << r.macro_f1 << " on " << r.evaluated << " utterances\n";
  return kExitOk;
}

inline int cmd_sweep(const RunConfig& cfg, bool with_metrics) {
  require(cfg.manifest, "--manifest");
  if (!cfg.chunking) throw Error(Errc::InvalidConfig, "sweep needs chunking enabled");
  const auto entries = load_manifest(cfg.manifest);
  const auto ext = external_vad(cfg);
  std::vector<AudioBuffer> audio(entries.size());
  std::vector<SweepInput> corpus(entries.size());
  parallel_for(entries.size(), cfg.jobs, [&](std::size_t i) {
    audio[i] = prepare_audio(entries[i].audio, entries[i].id);
    corpus[i].audio = &audio[i];
    corpus[i].regions = speech_regions(audio[i], cfg.vad, ext ? &*ext : nullptr);
  });
  const auto stats = sweep_delta(corpus, cfg.deltas, cfg.vad);
  std::vector<std::optional<ExperimentReport>> reports(stats.size());
  if (with_metrics) {
    const auto source = make_source(cfg);
    for (std::size_t i = 0; i < stats.size(); ++i) {
      RunConfig c = cfg;
      c.delta_ms = cfg.deltas[i];
      reports[i] = run_experiment(entries, *source, c, &std::cerr);
    }
  }
  emit(cfg.out, [&](std::ostream& os) {
    os << "delta_ms,utterances,chunks,mean_chunk_s,std_chunk_s,gap_histogram_100ms";
    if (with_metrics) os << ",macro_f1,micro_f1,pcc";
    os << '\n';
    for (std::size_t i = 0; i < stats.size(); ++i) {
      const auto& s = stats[i];
      char buf[160];
      std::snprintf(buf, sizeof buf, "%g,%zu,%zu,%.6f,%.6f,", s.delta_ms, s.utterances, s.chunk_count, s.mean_duration,
                    s.std_duration);
      os << buf;
      for (std::size_t b = 0; b < s.gap_histogram.size(); ++b) os << (b ? ";" : "") << s.gap_histogram[b];
      if (reports[i]) {
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,", reports[i]->macro_f1, reports[i]->micro_f1);
        os << buf;
        if (reports[i]->pcc) {
          std::snprintf(buf, sizeof buf, "%.6f", *reports[i]->pcc);
          os << buf;
        }
      }
      os << '\n';
    }
  });
  return kExitOk;
}

inline int cmd_ablate(const RunConfig& cfg, const std::vector<std::string>& conditions, const std::string& summary_path) {
  require(cfg.manifest, "--manifest");
  const auto entries = load_manifest(cfg.manifest);
  const auto source = make_source(cfg);
  const auto reports = run_ablation(entries, *source, cfg, conditions, &std::cerr);
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(to_json(r));
  emit(cfg.out, [&](std::ostream& os) { os << arr.dump(2) << '\n'; });
  if (!summary_path.empty()) emit(summary_path, [&](std::ostream& os) { write_summary_csv(os, reports); });
  return kExitOk;
}

/// One fused utterance vector per row: chunk embeddings fused with the
/// checkpoint's alpha (uniform without one) and averaged over chunks.
inline int cmd_export_embeddings(const RunConfig& cli_cfg, const nlohmann::json& given, const std::string& feb_out) {
  require(cli_cfg.manifest, "--manifest");
  const RunConfig cfg = cli_cfg.checkpoint.empty() ? cli_cfg : config_from_checkpoint(cli_cfg, given);
  const auto entries = load_manifest(cfg.manifest);
  std::vector<Utterance> utts;
  const Dataset ds = dataset_for(entries, cfg, &utts);
  if (!feb_out.empty()) {
    for (const auto& u : utts) {
      for (std::size_t m = 0; m < u.embeddings.size(); ++m) {
        FrameEmbedding fe = u.embeddings[m];
        fe.model_id = cfg.models[m];
        write_feb(feb_path(feb_out, cfg.models[m], u.audio.id), fe);
      }
    }
  }
  Vector alpha = Vector::Constant(static_cast<Eigen::Index>(cfg.models.size()), 1.0 / static_cast<double>(cfg.models.size()));
  if (!cfg.checkpoint.empty()) alpha = load_checkpoint(cfg.checkpoint).network.alpha();
  emit(cfg.out, [&](std::ostream& os) {
    char buf[32];
    for (const auto& s : ds.samples) {
      Vector fused = Vector::Zero(s.sources.front().cols());
      for (std::size_t m = 0; m < s.sources.size(); ++m) fused += alpha(static_cast<Eigen::Index>(m)) * s.sources[m].colwise().mean().transpose();
      os << s.id << ',' << s.label;
      for (Eigen::Index j = 0; j < fused.size(); ++j) {
        std::snprintf(buf, sizeof buf, ",%.9g", fused(j));
        os << buf;
      }
      os << '\n';
    }
  });
  return kExitOk;
}

inline bool is_validation_error(Errc c) {
  return c == Errc::InvalidConfig || c == Errc::InvalidThreshold || c == Errc::OutOfRange;
}

inline int run(int argc, char** argv) {
  CLI::App app{"Speech fluency scoring pipeline"};
  app.require_subcommand(1);
  struct Sub {
    CLI::App* app;
    Flags flags;
  };
  std::vector<std::unique_ptr<Sub>> subs;
  auto make = [&](const std::string& name, const std::string& help) {
    auto s = std::make_unique<Sub>();
    s->app = app.add_subcommand(name, help);
    add_common_flags(*s->app, s->flags);
    subs.push_back(std::move(s));
    return subs.back().get();
  };
  Sub* segment = make("segment", "VAD + breath-group chunking; writes chunk CSV");
  Sub* features = make("features", "fluency markers and voice quality per chunk; writes feature CSV");
  Sub* train_cmd = make("train", "train the classifier; writes a checkpoint directory");
  Sub* eval = make("eval", "evaluate a checkpoint, or run cross-validation without one; writes report JSON");
  Sub* sweep = make("sweep", "chunking statistics per pause threshold; writes CSV");
  Sub* ablate = make("ablate", "ablation conditions on shared folds; writes report JSON");
  Sub* exporter = make("export-embeddings", "fused utterance embeddings as CSV (optionally FEB1 frame files)");

  bool with_metrics = false;
  sweep->app->add_flag("--with-metrics", with_metrics, "also run the full experiment per threshold");
  std::vector<std::string> conditions;
  std::string summary_path;
  ablate->app->add_option("--conditions", conditions, "subset of: full, single:<model>, no-chunking, no-markers");
  ablate->app->add_option("--summary", summary_path, "summary CSV path");
  std::string feb_out;
  exporter->app->add_option("--feb-out", feb_out, "also write frame embeddings as <dir>/<model>/<id>.feb");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    for (const auto& s : subs) {
      if (!s->app->parsed()) continue;
      const RunConfig cfg = resolve_config(s->flags);
      std::cerr << "config fingerprint: " << config_fingerprint(cfg) << '\n';
      if (s.get() == segment) return cmd_segment(cfg);
      if (s.get() == features) return cmd_features(cfg);
      if (s.get() == train_cmd) return cmd_train(cfg);
      if (s.get() == eval) return cmd_eval(cfg, s->flags.given());
      if (s.get() == sweep) return cmd_sweep(cfg, with_metrics);
      if (s.get() == ablate) return cmd_ablate(cfg, conditions, summary_path);
      if (s.get() == exporter) return cmd_export_embeddings(cfg, s->flags.given(), feb_out);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return is_validation_error(e.code()) ? kExitValidation : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitValidation;
}

}  // namespace fluency::cli
