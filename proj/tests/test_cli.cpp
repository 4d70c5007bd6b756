#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "fluency/embeddings.hpp"
#include "fluency/synth.hpp"
#include "support.hpp"

namespace ft = fluency::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + std::string(FLUENCY_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new ft::TempDir("cli");
    auto utts = fluency::synth::separable_corpus(12, 21, 2, 4);
    for (std::size_t i = 0; i < utts.size(); ++i) utts[i].split = i < 9 ? "train" : "test";
    fluency::synth::write_corpus(dir_->path(), utts, 21);
  }
  static void TearDownTestSuite() { delete dir_; }

  static std::string manifest() { return (dir_->path() / "manifest.jsonl").string(); }
  static std::string out(const std::string& name) { return (dir_->path() / name).string(); }
  static std::string small_net() {
    return " --mock-dim 12 --conv-filters 6 --lstm-hidden 5 --batch-size 4 --learning-rate 0.01 --seed 4";
  }
  static ft::TempDir* dir_;
};

ft::TempDir* Cli::dir_ = nullptr;

}  // namespace

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("segment --bogus"), 2);
  EXPECT_EQ(run("segment --manifest " + manifest() + " --delta-ms 50"), 2);
  EXPECT_EQ(run("segment --manifest " + manifest() + " --protocol nope"), 2);
  EXPECT_EQ(run("segment --manifest " + out("absent.jsonl")), 1);
  EXPECT_EQ(run("segment --manifest " + manifest() + " --out " + out("seg_ok.csv")), 0);
}

TEST_F(Cli, HelpListsFlags) {
  EXPECT_EQ(run("--help > " + out("help.txt")), 0);
  const auto top = slurp(out("help.txt"));
  for (const char* sub : {"segment", "features", "train", "eval", "sweep", "ablate", "export-embeddings"}) {
    EXPECT_NE(top.find(sub), std::string::npos) << sub;
  }
  EXPECT_EQ(run("train --help > " + out("help_train.txt")), 0);
  const auto train = slurp(out("help_train.txt"));
  for (const char* flag : {"--manifest", "--out", "--seed", "--emb", "--delta-ms", "--epochs", "--learning-rate", "--config"}) {
    EXPECT_NE(train.find(flag), std::string::npos) << flag;
  }
}

TEST_F(Cli, SegmentIsDeterministic) {
  ASSERT_EQ(run("segment --manifest " + manifest() + " --out " + out("seg_a.csv")), 0);
  ASSERT_EQ(run("segment --manifest " + manifest() + " --out " + out("seg_b.csv") + " --jobs 3"), 0);
  const auto a = slurp(out("seg_a.csv"));
  EXPECT_EQ(a, slurp(out("seg_b.csv")));
  const auto rows = lines_of(a);
  ASSERT_GT(rows.size(), 12u);
  EXPECT_EQ(rows[0], "utterance_id,index,start,end");
}

TEST_F(Cli, SegmentHonoursExternalVad) {
  std::ofstream vad(out("vad.jsonl"));
  for (int i = 0; i < 12; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "utt%03d", i);
    vad << R"({"id":")" << id << R"(","regions":[{"start":0.0,"end":0.2}]})" << '\n';
  }
  vad.close();
  ASSERT_EQ(run("segment --manifest " + manifest() + " --vad-json " + out("vad.jsonl") + " --out " + out("seg_vad.csv")), 0);
  const auto rows = lines_of(slurp(out("seg_vad.csv")));
  ASSERT_EQ(rows.size(), 13u);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto end = std::stod(rows[i].substr(rows[i].rfind(',') + 1));
    EXPECT_LE(end, 0.2 + 1e-9);
  }
}

TEST_F(Cli, ConfigFileThenFlags) {
  std::ofstream(out("cfg.json")) << R"({"delta_ms": 2000, "min_speech_ms": 100})";
  std::ofstream(out("cfg.toml")) << "# thresholds\n[segmentation]\ndelta_ms = 2000\nmodels = [\"wavlm\", \"hubert\"]\n";
  ASSERT_EQ(run("segment --manifest " + manifest() + " --delta-ms 2000 --out " + out("d2000.csv")), 0);
  ASSERT_EQ(run("segment --manifest " + manifest() + " --delta-ms 300 --out " + out("d300.csv")), 0);
  ASSERT_NE(slurp(out("d2000.csv")), slurp(out("d300.csv")));

  ASSERT_EQ(run("segment --manifest " + manifest() + " --config " + out("cfg.json") + " --out " + out("c_json.csv")), 0);
  EXPECT_EQ(slurp(out("c_json.csv")), slurp(out("d2000.csv")));
  ASSERT_EQ(run("segment --manifest " + manifest() + " --config " + out("cfg.toml") + " --out " + out("c_toml.csv")), 0);
  EXPECT_EQ(slurp(out("c_toml.csv")), slurp(out("d2000.csv")));
  ASSERT_EQ(run("segment --manifest " + manifest() + " --config " + out("cfg.json") + " --delta-ms 300 --out " + out("c_flag.csv")), 0);
  EXPECT_EQ(slurp(out("c_flag.csv")), slurp(out("d300.csv")));

  std::ofstream(out("bad.json")) << R"({"delta_msec": 300})";
  EXPECT_EQ(run("segment --manifest " + manifest() + " --config " + out("bad.json")), 2);
  std::ofstream(out("bad.toml")) << "delta_ms = [1, 2\n";
  EXPECT_NE(run("segment --manifest " + manifest() + " --config " + out("bad.toml")), 0);
}

TEST_F(Cli, FeaturesCsv) {
  ASSERT_EQ(run("features --manifest " + manifest() + " --out " + out("feat.csv")), 0);
  const auto rows = lines_of(slurp(out("feat.csv")));
  ASSERT_GT(rows.size(), 1u);
  EXPECT_EQ(rows[0], "utterance_id,chunk_index,speech_rate,pause_duration,articulation_rate,ngram_repetition,"
                     "f0_mean,f0_std,shimmer_pct,hnr_db,voiced_fraction");
  for (std::size_t i = 1; i < rows.size(); ++i) EXPECT_EQ(std::count(rows[i].begin(), rows[i].end(), ','), 10);
  ASSERT_EQ(run("features --manifest " + manifest() + " --out " + out("feat2.csv")), 0);
  EXPECT_EQ(slurp(out("feat.csv")), slurp(out("feat2.csv")));
}

TEST_F(Cli, TrainTwiceGivesIdenticalCheckpoints) {
  const std::string args = "train --manifest " + manifest() + " --protocol split --epochs 3" + small_net();
  ASSERT_EQ(run(args + " --out " + out("ck_a")), 0);
  ASSERT_EQ(run(args + " --out " + out("ck_b")), 0);
  for (const char* f : {"weights.bin", "meta.json", "history.json", "run_config.json"}) {
    EXPECT_EQ(slurp(out("ck_a") + "/" + f), slurp(out("ck_b") + "/" + f)) << f;
  }
  EXPECT_FALSE(slurp(out("ck_a") + "/weights.bin").empty());

  ASSERT_EQ(run("eval --manifest " + manifest() + " --protocol split --checkpoint " + out("ck_a") + " --out " + out("rep_a.json")), 0);
  ASSERT_EQ(run("eval --manifest " + manifest() + " --protocol split --checkpoint " + out("ck_a") + " --out " + out("rep_b.json")), 0);
  auto a = nlohmann::json::parse(slurp(out("rep_a.json")));
  auto b = nlohmann::json::parse(slurp(out("rep_b.json")));
  EXPECT_EQ(a["evaluated"], 3);
  EXPECT_TRUE(a.contains("macro_f1"));
  EXPECT_EQ(a["ssl_mode"], "mock");
  a.erase("runtime_seconds");
  b.erase("runtime_seconds");
  EXPECT_EQ(a, b);
}

TEST_F(Cli, SweepDefaultRows) {
  ASSERT_EQ(run("sweep --manifest " + manifest() + " --out " + out("sweep.csv")), 0);
  const auto rows = lines_of(slurp(out("sweep.csv")));
  ASSERT_EQ(rows.size(), 5u);
  EXPECT_EQ(rows[0], "delta_ms,utterances,chunks,mean_chunk_s,std_chunk_s,gap_histogram_100ms");
  EXPECT_EQ(rows[1].substr(0, 7), "200,12,");
  EXPECT_EQ(rows[4].substr(0, 7), "350,12,");
  ASSERT_EQ(run("sweep --manifest " + manifest() + " --deltas 250 400 --out " + out("sweep2.csv")), 0);
  EXPECT_EQ(lines_of(slurp(out("sweep2.csv"))).size(), 3u);
}

TEST_F(Cli, EmbeddingDirectoryFromEnvironment) {
  const std::string base = "export-embeddings --manifest " + manifest() + " --mock-dim 8 --seed 2";
  ASSERT_EQ(run(base + " --emb mock --feb-out " + out("febs") + " --out " + out("emb_mock.csv")), 0);
  EXPECT_TRUE(std::filesystem::exists(fluency::feb_path(out("febs"), "hubert", "utt003")));

  ASSERT_EQ(run(base + " --out " + out("emb_env.csv"), "FLUENCY_EMB_DIR=" + out("febs")), 0);
  EXPECT_EQ(run(base + " --out " + out("emb_none.csv"), "FLUENCY_EMB_DIR=" + out("nowhere")), 1);
  // An explicit --emb beats the environment.
  ASSERT_EQ(run(base + " --emb mock --out " + out("emb_flag.csv"), "FLUENCY_EMB_DIR=" + out("nowhere")), 0);
  EXPECT_EQ(slurp(out("emb_flag.csv")), slurp(out("emb_mock.csv")));

  const auto mock = lines_of(slurp(out("emb_mock.csv")));
  const auto env = lines_of(slurp(out("emb_env.csv")));
  ASSERT_EQ(mock.size(), env.size());
  ASSERT_EQ(mock.size(), 12u);
  for (std::size_t r = 0; r < mock.size(); ++r) {
    std::istringstream a(mock[r]), b(env[r]);
    std::string x, y;
    std::getline(a, x, ',');
    std::getline(b, y, ',');
    EXPECT_EQ(x, y);
    int fields = 0;
    while (std::getline(a, x, ',') && std::getline(b, y, ',')) {
      if (++fields == 1) {
        EXPECT_EQ(x, y);  // label
        continue;
      }
      EXPECT_NEAR(std::stod(x), std::stod(y), 1e-5);
    }
    EXPECT_EQ(fields, 1 + 8);
  }
}

TEST_F(Cli, AblateWritesSummary) {
  const std::string args = "ablate --manifest " + manifest() + " --epochs 2 --folds 2" + small_net() +
                           " --conditions full single:wavlm --out " + out("abl.json") + " --summary " + out("abl.csv");
  ASSERT_EQ(run(args), 0);
  const auto j = nlohmann::json::parse(slurp(out("abl.json")));
  ASSERT_EQ(j.size(), 2u);
  EXPECT_EQ(j[1]["alpha"], (std::vector<double>{0.0, 0.0, 1.0}));
  const auto rows = lines_of(slurp(out("abl.csv")));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1].substr(0, 5), "full,");
  EXPECT_EQ(run("ablate --manifest " + manifest() + " --conditions sideways"), 2);
}
