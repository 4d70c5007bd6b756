// Prints one PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.
#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "fluency/eval.hpp"
#include "fluency/synth.hpp"
#include "support.hpp"

using namespace fluency;
namespace ft = fluency::testing;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

class Check {
 public:
  void expect(bool cond, const std::string& what) {
    if (!cond && ok_) {
      ok_ = false;
      first_failure_ = what;
    }
  }
  Outcome done(const std::string& summary) const { return {ok_, ok_ ? summary : first_failure_ + " (" + summary + ")"}; }

 private:
  bool ok_ = true;
  std::string first_failure_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::Io;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome segmentation_oracle() {
  SplitMix64 rng(20240601);
  VadConfig cfg;
  cfg.frame_ms = 10;
  Check c;
  std::size_t chunks = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 20 + rng.below(10000 - 19);
    std::vector<double> levels;
    bool loud = rng.below(2) == 0;
    while (levels.size() < n) {
      const auto run = 1 + rng.below(loud ? 80 : 60);
      levels.insert(levels.end(), run, loud ? rng.uniform(0.2, 0.6) : rng.uniform(0.0005, 0.002));
      loud = !loud;
    }
    levels.resize(n);
    const auto buf = ft::blocks(levels, 1000, 10);
    const double dur = static_cast<double>(n) / 100.0;
    // One to three disjoint regions with arbitrary, off-grid boundaries.
    std::vector<double> cuts{0.0, dur};
    const int extra = static_cast<int>(rng.below(3)) * 2;
    for (int i = 0; i < extra; ++i) cuts.push_back(rng.uniform(0.0, dur));
    std::sort(cuts.begin(), cuts.end());
    std::vector<SpeechRegion> regions;
    for (std::size_t i = 0; i + 1 < cuts.size(); i += 2) {
      if (cuts[i + 1] > cuts[i]) regions.push_back({cuts[i], cuts[i + 1]});
    }
    const double delta = 110.0 + 10.0 * static_cast<double>(rng.below(50));
    const auto got = chunk_breath_groups(buf, regions, delta, cfg);
    const auto want = ft::brute_force_chunks(levels, regions, delta, cfg, 1000);
    c.expect(got.size() == want.size(), "chunk count differs in trial " + std::to_string(trial));
    for (std::size_t i = 0; i < std::min(got.size(), want.size()); ++i) {
      c.expect(got[i].start == want[i].start && got[i].end == want[i].end,
               "boundary differs in trial " + std::to_string(trial));
    }
    chunks += got.size();
  }
  const double s = seconds_since(t0);
  c.expect(s < 10.0, "runtime " + fmt("%.2f", s) + " s >= 10 s");
  return c.done("1000 sequences, " + std::to_string(chunks) + " chunks, " + fmt("%.2f", s) + " s");
}

Outcome sweep_monotonicity() {
  Check c;
  const auto utts = synth::sweep_corpus(100, 8);
  std::vector<AudioBuffer> audio;
  for (const auto& u : utts) audio.push_back(synth::render(u, 8));
  VadConfig vad;
  std::vector<SweepInput> corpus;
  for (const auto& a : audio) corpus.push_back({&a, speech_extent(detect_speech(a, vad))});
  const auto stats = sweep_delta(corpus, {200, 250, 300, 350}, vad);
  for (std::size_t d = 1; d < stats.size(); ++d) {
    for (std::size_t u = 0; u < utts.size(); ++u) {
      c.expect(stats[d].per_utterance_counts[u] <= stats[d - 1].per_utterance_counts[u],
               utts[u].id + " gains chunks at " + fmt("%.0f", stats[d].delta_ms) + " ms");
    }
  }

  // Two pauses of 220 and 320 ms.
  const auto buf = ft::concat({ft::silence(0.3), ft::white_noise(0.5, 1), ft::silence(0.22), ft::white_noise(0.5, 2),
                               ft::silence(0.32), ft::white_noise(0.5, 3), ft::silence(0.3)});
  const auto regions = speech_extent(detect_speech(buf, vad));
  const auto n200 = chunk_breath_groups(buf, regions, 200, vad).size();
  const auto n300 = chunk_breath_groups(buf, regions, 300, vad).size();
  const auto n350 = chunk_breath_groups(buf, regions, 350, vad).size();
  c.expect(n200 == 3 && n300 == 2 && n350 == 1, "gap example gave " + std::to_string(n200) + "/" + std::to_string(n300) +
                                                    "/" + std::to_string(n350));
  std::string counts;
  for (const auto& s : stats) counts += (counts.empty() ? "" : "/") + std::to_string(s.chunk_count);
  return c.done("100 utterances, totals " + counts + "; gap example " + std::to_string(n200) + "/" +
                std::to_string(n300) + "/" + std::to_string(n350));
}

Outcome pooling_identities() {
  Check c;
  SplitMix64 rng(77);
  double worst = 0.0;
  auto rel = [](const Vector& a, const Vector& b) {
    return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
  };
  for (int trial = 0; trial < 500; ++trial) {
    FrameEmbedding fe;
    fe.hop = 0.02;
    fe.offset = 0.0125;
    const auto frames = static_cast<Eigen::Index>(1 + rng.below(400));
    fe.matrix = ft::random_matrix(frames, 1 + static_cast<Eigen::Index>(rng.below(64)), rng, rng.uniform(0.1, 100.0));
    const double end = fe.frame_center(frames - 1) + 0.01;
    const Vector whole = mean_pool(fe);
    worst = std::max(worst, rel(mean_pool(slice_frames(fe, Chunk{"u", 0, 0.0, end})), whole));

    // Cut into up to five consecutive chunks and recombine by frame counts.
    std::vector<double> cuts{0.0, end};
    for (std::uint64_t i = rng.below(5); i > 0; --i) cuts.push_back(rng.uniform(0.0, end));
    std::sort(cuts.begin(), cuts.end());
    Vector acc = Vector::Zero(fe.dim());
    Eigen::Index total = 0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const auto part = slice_frames(fe, Chunk{"u", static_cast<int>(i), cuts[i], cuts[i + 1]});
      if (part.frames() == 0) continue;
      acc += static_cast<double>(part.frames()) * mean_pool(part);
      total += part.frames();
    }
    c.expect(total == frames, "slices lost frames");
    worst = std::max(worst, rel(acc / static_cast<double>(total), whole));
  }
  c.expect(worst <= 1e-9, "relative error " + fmt("%.3g", worst));
  return c.done("500 random matrices, max relative error " + fmt("%.2g", worst));
}

Outcome fusion_simplex() {
  Check c;
  SplitMix64 rng(5);
  std::vector<Sample> data;
  for (int i = 0; i < 16; ++i) {
    data.push_back(ft::random_sample(rng, 1 + static_cast<Eigen::Index>(rng.below(5)), 3, 6, 4, i % 3, "r" + std::to_string(i)));
  }
  auto cfg = ft::small_model(9);
  cfg.batch_size = 4;
  cfg.epochs = 250;  // 4 batches per epoch: 1000 steps
  cfg.learning_rate = 0.05;
  long steps = 0;
  double worst = 0.0;
  Vector last;
  train(data, cfg, [&](long, const Network& net) {
    const Vector a = net.alpha();
    ++steps;
    worst = std::max(worst, std::abs(a.sum() - 1.0));
    c.expect((a.array() >= 0.0).all(), "negative weight at step " + std::to_string(steps));
    last = a;
  });
  c.expect(steps >= 1000, "only " + std::to_string(steps) + " steps");
  c.expect(worst <= 1e-12, "sum deviates by " + fmt("%.3g", worst));

  Network net({3, 5, 0}, ft::small_model());
  net.params().theta.setZero();
  const Vector a = ft::random_matrix(5, 1, rng), b = ft::random_matrix(5, 1, rng), d = ft::random_matrix(5, 1, rng);
  const Vector alpha = net.alpha();
  c.expect(alpha(0) == 1.0 / 3.0 && alpha(1) == 1.0 / 3.0 && alpha(2) == 1.0 / 3.0, "theta 0 is not uniform");
  const double mean_err = (net.fuse({a, b, d}) - (a + b + d) / 3.0).cwiseAbs().maxCoeff();
  c.expect(mean_err <= 1e-15, "theta 0 fusion differs from the mean by " + fmt("%.3g", mean_err));
  std::ostringstream alpha_text;
  alpha_text << last.transpose();
  return c.done(std::to_string(steps) + " steps, max |sum-1| " + fmt("%.2g", worst) + ", final alpha " + alpha_text.str());
}

Outcome gradient_check() {
  Check c;
  SplitMix64 rng(3);
  std::vector<Sample> data;
  for (int i = 0; i < 4; ++i) data.push_back(ft::random_sample(rng, 2 + static_cast<Eigen::Index>(i), 3, 5, 4, i % 3));
  auto cfg = ft::small_model(4);
  cfg.dropout = 0.0;
  const NetworkShape shape{3, 5, 4};
  Network net(shape, cfg);
  net.params().theta = ft::random_matrix(3, 1, rng, 0.5);
  std::vector<const Sample*> ptrs;
  for (const auto& s : data) ptrs.push_back(&s);
  const auto batch = make_batch(ptrs, shape, {});
  GradCheckOptions opts;
  opts.coordinates = 240;
  opts.throw_on_failure = false;
  const auto t0 = std::chrono::steady_clock::now();
  const auto report = grad_check(net, batch, opts);
  const double s = seconds_since(t0);
  std::size_t tensors = 0;
  net.params().for_each([&](const std::string&, const Matrix&) { ++tensors; });
  const auto covered = report.tensors_covered();
  c.expect(report.entries.size() >= 200, std::to_string(report.entries.size()) + " coordinates");
  c.expect(covered.size() == tensors, std::to_string(covered.size()) + " of " + std::to_string(tensors) + " tensors");
  c.expect(std::find(covered.begin(), covered.end(), "theta") != covered.end(), "theta not checked");
  c.expect(report.max_rel_error < 1e-4, "max relative error " + fmt("%.3g", report.max_rel_error));
  c.expect(s < 60.0, "runtime " + fmt("%.1f", s) + " s");
  return c.done(std::to_string(report.entries.size()) + " coordinates over " + std::to_string(covered.size()) +
                " tensors, max relative error " + fmt("%.2g", report.max_rel_error) + ", " + fmt("%.2f", s) + " s");
}

std::vector<ManifestEntry> corpus_entries(const ft::TempDir& dir, const std::vector<synth::Utterance>& utts,
                                          std::uint64_t seed) {
  synth::write_corpus(dir.path(), utts, seed);
  return load_manifest(dir.path() / "manifest.jsonl");
}

Outcome end_to_end_overfit() {
  Check c;
  ft::TempDir dir("accept_overfit");
  auto utts = synth::separable_corpus(60, 31, 2, 8, "train");
  const auto held = synth::separable_corpus(30, 32, 2, 8, "held");
  utts.insert(utts.end(), held.begin(), held.end());
  const auto entries = corpus_entries(dir, utts, 31);

  // Full-size network on 1024-d mock embeddings.
  RunConfig cfg;
  cfg.model.seed = 1;
  cfg.model.target_train_f1 = 0.95;
  MockSource source(cfg.mock_dim, cfg.model.seed);
  const auto ds = build_dataset(load_utterances(entries, source, cfg), cfg, nullptr, cfg.delta_ms);
  std::vector<Sample> train_set, test_set;
  for (const auto& s : ds.samples) (s.id.rfind("train", 0) == 0 ? train_set : test_set).push_back(s);
  c.expect(train_set.size() == 60 && test_set.size() == 30, "dataset lost utterances");

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(train_set, cfg.model);
  const double s = seconds_since(t0);
  const double train_f1 = result.history.back().train_macro_f1;
  const auto preds = predict_all(result.model, test_set);
  std::vector<int> p, y;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(preds[i].label);
    y.push_back(test_set[i].label);
  }
  const double held_f1 = macro_f1(p, y);
  c.expect(train_f1 >= 0.95, "training macro-F1 " + fmt("%.3f", train_f1));
  c.expect(result.history.size() <= 200, "needed more than 200 epochs");
  c.expect(held_f1 >= 0.9, "held-out macro-F1 " + fmt("%.3f", held_f1));
  return c.done("train F1 " + fmt("%.3f", train_f1) + " after " + std::to_string(result.history.size()) +
                " epochs, held-out F1 " + fmt("%.3f", held_f1) + ", " + fmt("%.1f", s) + " s");
}

Outcome informative_source_ablation() {
  Check c;
  ft::TempDir dir("accept_ablation");
  const auto entries = corpus_entries(dir, synth::separable_corpus(60, 41), 41);
  RunConfig cfg;
  cfg.mock_dim = 24;
  cfg.model.conv_filters = 12;
  cfg.model.lstm_hidden = 10;
  cfg.model.batch_size = 8;
  cfg.model.learning_rate = 0.01;
  cfg.model.epochs = 60;
  cfg.folds = 3;
  // Markers separate the classes on their own; leave them out so only the
  // embeddings carry signal.
  cfg.markers = false;
  std::string summary;
  for (std::size_t m = 0; m < cfg.models.size(); ++m) {
    const auto& informative = cfg.models[m];
    for (std::uint64_t seed : {1, 2, 3}) {
      cfg.model.seed = seed;
      ft::SelectiveSource source(informative, cfg.mock_dim, seed);
      const auto reports = run_ablation(entries, source, cfg, {"full", "single:" + informative});
      const auto& alpha = reports[0].alpha;
      const auto top = static_cast<std::size_t>(std::max_element(alpha.begin(), alpha.end()) - alpha.begin());
      const std::string tag = informative + " seed " + std::to_string(seed);
      c.expect(top == m, tag + ": argmax alpha is " + cfg.models[top]);
      c.expect(reports[0].macro_f1 >= reports[1].macro_f1 - 0.02,
               tag + ": fusion F1 " + fmt("%.3f", reports[0].macro_f1) + " vs single " + fmt("%.3f", reports[1].macro_f1));
      summary += (summary.empty() ? "" : "; ") + tag + " alpha " + fmt("%.2f", alpha[m]) + " F1 " +
                 fmt("%.3f", reports[0].macro_f1) + "/" + fmt("%.3f", reports[1].macro_f1);
    }
  }
  return c.done(summary);
}

Outcome metrics_oracles() {
  Check c;
  const double f_half = macro_f1({0, 1, 0, 1}, {0, 0, 1, 1});
  const double f_sixth = macro_f1({0, 0, 0, 0, 0, 0}, {0, 0, 1, 1, 2, 2});
  // Labels [0,1,2,2], predictions [0,1,1,2]: sxy = 2, sxx = 2.75, syy = 2.
  const double r = pearson(std::vector<int>{0, 1, 1, 2}, std::vector<int>{0, 1, 2, 2});
  c.expect(std::abs(f_half - 0.5) <= 1e-9, "macro-F1 " + fmt("%.10f", f_half));
  c.expect(std::abs(f_sixth - 1.0 / 6.0) <= 1e-9, "macro-F1 " + fmt("%.10f", f_sixth));
  c.expect(std::abs(r - 2.0 / std::sqrt(5.5)) <= 1e-9, "pearson " + fmt("%.10f", r));
  c.expect(bucket_score(5) == FluencyLabel::Low && bucket_score(6) == FluencyLabel::Medium &&
               bucket_score(10) == FluencyLabel::High,
           "bucket mapping");
  return c.done("macro-F1 " + fmt("%.4f", f_half) + ", " + fmt("%.4f", f_sixth) + "; PCC " + fmt("%.4f", r) +
                "; buckets 5/6/10 -> Low/Medium/High");
}

Outcome voice_quality_bounds() {
  Check c;
  const Chunk whole{"u", 0, 0.0, 1.0};
  const auto pure = voice_quality(ft::sine(200.0, 1.0), whole);
  c.expect(pure.f0_mean && std::abs(*pure.f0_mean - 200.0) <= 2.0, "sine F0");
  c.expect(pure.shimmer_pct && *pure.shimmer_pct < 1.0, "sine shimmer");
  c.expect(pure.hnr_db && *pure.hnr_db > 20.0, "sine HNR");

  AudioBuffer am;
  am.sample_rate = 16000;
  am.samples.resize(16000);
  for (std::size_t i = 0; i < am.samples.size(); ++i) {
    const double amp = (i / 80) % 2 == 0 ? 1.0 : 0.8;  // 80 samples per cycle at 200 Hz
    am.samples[i] = 0.5 * amp * std::sin(2.0 * std::numbers::pi * static_cast<double>(i % 80) / 80.0);
  }
  const auto modulated = voice_quality(am, whole);
  c.expect(modulated.shimmer_pct && *modulated.shimmer_pct >= 15.0 && *modulated.shimmer_pct <= 25.0, "AM shimmer");

  const auto noise = voice_quality(ft::white_noise(1.0, 17), whole);
  c.expect(noise.voiced_fraction < 0.2, "noise voiced fraction " + fmt("%.3f", noise.voiced_fraction));
  auto opt = [](const std::optional<double>& v) { return v ? fmt("%.2f", *v) : std::string("absent"); };
  return c.done("sine F0 " + opt(pure.f0_mean) + " Hz, shimmer " + opt(pure.shimmer_pct) + "%, HNR " +
                opt(pure.hnr_db) + " dB; AM shimmer " + opt(modulated.shimmer_pct) + "%; noise voiced " +
                fmt("%.3f", noise.voiced_fraction));
}

Outcome format_round_trips() {
  Check c;
  ft::TempDir dir("accept_formats");
  SplitMix64 rng(13);
  FrameEmbedding fe;
  fe.model_id = "hubert";
  fe.offset = 0.0125;
  fe.matrix = ft::random_matrix(57, 32, rng).cast<float>().cast<double>();
  write_feb(dir / "a.feb", fe);
  const auto back = read_feb(dir / "a.feb");
  c.expect(back.matrix == fe.matrix && back.model_id == fe.model_id && back.hop == fe.hop && back.offset == fe.offset,
           "FEB1 values changed");
  write_feb(dir / "b.feb", back);
  c.expect(slurp(dir / "a.feb") == slurp(dir / "b.feb"), "FEB1 bytes changed");

  const std::string good = encode_feb(fe);
  auto bytes = [](const std::string& s) { return std::vector<unsigned char>(s.begin(), s.end()); };
  std::string wrong_version = good;
  wrong_version[4] = 2;
  c.expect(code_of([&] { decode_feb(bytes("FEBX" + good.substr(4))); }) == Errc::BadMagic, "FEB1 magic");
  c.expect(code_of([&] { decode_feb(bytes(wrong_version)); }) == Errc::VersionMismatch, "FEB1 version");
  c.expect(code_of([&] { decode_feb(bytes(good.substr(0, good.size() - 1))); }) == Errc::TruncatedData, "FEB1 truncation");

  std::vector<Sample> data;
  for (int i = 0; i < 9; ++i) data.push_back(ft::random_sample(rng, 3, 3, 6, 4, i % 3, "c" + std::to_string(i)));
  auto cfg = ft::small_model();
  cfg.epochs = 2;
  auto model = train(data, cfg).model;
  model.source_names = {"wav2vec2", "hubert", "wavlm"};
  save_checkpoint(dir / "ck1", model);
  const auto loaded = load_checkpoint(dir / "ck1");
  save_checkpoint(dir / "ck2", loaded);
  c.expect(slurp(dir / "ck1/weights.bin") == slurp(dir / "ck2/weights.bin"), "checkpoint weights changed");
  c.expect(slurp(dir / "ck1/meta.json") == slurp(dir / "ck2/meta.json"), "checkpoint metadata changed");
  bool same = true;
  model.network.params().for_each([&](const std::string& name, const Matrix& m) {
    loaded.network.params().for_each([&](const std::string& other, const Matrix& n) {
      if (name == other) same = same && m == n;
    });
  });
  c.expect(same, "checkpoint parameters changed");

  auto meta = nlohmann::json::parse(slurp(dir / "ck2/meta.json"));
  meta["format_version"] = 99;
  std::ofstream(dir / "ck2/meta.json") << meta.dump();
  c.expect(code_of([&] { load_checkpoint(dir / "ck2"); }) == Errc::VersionMismatch, "checkpoint version");
  std::filesystem::resize_file(dir / "ck1/weights.bin", 16);
  c.expect(code_of([&] { load_checkpoint(dir / "ck1"); }) == Errc::TruncatedData, "checkpoint truncation");
  return c.done("FEB1 57x32 and checkpoint re-encode byte-identical; BadMagic, VersionMismatch, TruncatedData raised");
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(FLUENCY_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Outcome cli_determinism() {
  Check c;
  ft::TempDir dir("accept_cli");
  auto utts = synth::separable_corpus(12, 51, 2, 5);
  for (std::size_t i = 0; i < utts.size(); ++i) utts[i].split = i < 9 ? "train" : "test";
  synth::write_corpus(dir.path(), utts, 51);
  const std::string m = " --manifest " + (dir / "manifest.jsonl").string() + " --seed 7";
  const std::string net = " --mock-dim 16 --conv-filters 8 --lstm-hidden 6 --batch-size 4 --learning-rate 0.01 --folds 2";
  struct Cmd {
    std::string name;
    std::string args;
    std::vector<std::string> outputs;
  };
  const std::vector<Cmd> cmds{
      {"segment", "segment" + m, {"out.csv"}},
      {"features", "features" + m + " --vq-markers", {"out.csv"}},
      {"sweep", "sweep" + m, {"out.csv"}},
      {"export-embeddings", "export-embeddings" + m + " --mock-dim 8", {"out.csv"}},
      {"train", "train" + m + net + " --protocol split --epochs 3", {"out/weights.bin", "out/meta.json", "out/history.json"}},
      {"eval", "eval" + m + net + " --epochs 3", {"out.json"}},
      {"ablate", "ablate" + m + net + " --epochs 2 --conditions full no-markers", {"out.json"}},
  };
  auto strip_runtime = [](std::string text) {
    try {
      auto j = nlohmann::json::parse(text);
      auto scrub = [](nlohmann::json& r) { r.erase("runtime_seconds"); };
      if (j.is_array()) {
        for (auto& r : j) scrub(r);
      } else {
        scrub(j);
      }
      return j.dump();
    } catch (const nlohmann::json::exception&) {
      return text;
    }
  };
  for (const auto& cmd : cmds) {
    std::vector<std::string> first;
    for (int rep = 0; rep < 2; ++rep) {
      const auto out_dir = dir / (cmd.name + std::to_string(rep));
      std::filesystem::create_directories(out_dir);
      const std::string target = cmd.outputs[0].rfind("out/", 0) == 0 ? "out" : cmd.outputs[0];
      const int code = run_cli(cmd.args + " --out " + (out_dir / target).string());
      c.expect(code == 0, cmd.name + " exited " + std::to_string(code));
      for (std::size_t i = 0; i < cmd.outputs.size(); ++i) {
        const auto text = strip_runtime(slurp(out_dir / cmd.outputs[i]));
        c.expect(!text.empty(), cmd.name + " wrote nothing");
        if (rep == 0) {
          first.push_back(text);
        } else {
          c.expect(text == first[i], cmd.name + ": " + cmd.outputs[i] + " differs between runs");
        }
      }
    }
  }
  return c.done(std::to_string(cmds.size()) + " commands run twice with identical outputs");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"segmentation oracle equivalence", segmentation_oracle},
      {"delta sweep monotonicity", sweep_monotonicity},
      {"pooling identities", pooling_identities},
      {"fusion simplex", fusion_simplex},
      {"gradient check", gradient_check},
      {"end-to-end overfit", end_to_end_overfit},
      {"informative-source ablation", informative_source_ablation},
      {"metrics oracles", metrics_oracles},
      {"voice quality", voice_quality_bounds},
      {"format round-trips", format_round_trips},
      {"determinism", cli_determinism},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += o.ok ? 0 : 1;
    std::cout << (o.ok ? "[PASS] " : "[FAIL] ") << name << ": " << o.detail << " [" << fmt("%.1f", seconds_since(t0))
              << " s]" << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
