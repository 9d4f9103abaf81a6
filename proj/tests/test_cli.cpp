/*
Copyright 2026 The trackdiff Authors. All rights reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "support.hpp"
#include "trackdiff/cli.hpp"
#include "trackdiff/corpus.hpp"
#include "trackdiff/midi.hpp"
#include "trackdiff/score.hpp"

namespace trackdiff {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("trackdiff_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_ / "corpus" / "nested");
    Rng rng(42);
    for (int i = 0; i < 12; ++i) {
      const Song s = testing::random_song(rng, 2, true);
      const fs::path dir = i % 3 == 0 ? root_ / "corpus" / "nested" : root_ / "corpus";
      std::ofstream(dir / ("song" + std::to_string(i) + ".notes")) << write_notelist(s);
    }
    std::ofstream(root_ / "corpus" / "tiny.notes") << "note melody 0 72 4\n";  // filtered
    const CliResult bv = run({"--seed", "1", "--quiet", "build-vocab", p("corpus"), "-o", p("vocab.json"), "--scores",
                        p("scores"), "--report", p("vocab_report.json")});
    ASSERT_EQ(bv.code, 0) << bv.err;
    const CliResult tr = run({"--seed", "3", "--quiet", "train", "--manifest", p("scores/manifest.json"), "--vocab",
                        p("vocab.json"), "--out", p("ckpt"), "--steps", "4", "--batch", "2", "--valid-every", "2",
                        "--warmup", "1", "--diffusion-steps", "6"});
    ASSERT_EQ(tr.code, 0) << tr.err;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static std::string p(const std::string& rel) { return (root_ / rel).string(); }
  static std::string first_score() {
    const auto manifest = CorpusManifest::from_json(slurp(root_ / "scores" / "manifest.json"));
    return p("scores/" + manifest.entries.front().score);
  }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, BuildVocabOutputs) {
  const auto report = nlohmann::json::parse(slurp(root_ / "vocab_report.json"));
  EXPECT_EQ(report["files"], 13);
  EXPECT_EQ(report["filtered"]["too_few_notes"], 1);
  const auto manifest = CorpusManifest::from_json(slurp(root_ / "scores" / "manifest.json"));
  EXPECT_EQ(manifest.entries.size(), 12u);
  for (const auto& e : manifest.entries) {
    EXPECT_TRUE(fs::exists(root_ / "scores" / e.score)) << e.score;
    EXPECT_EQ(e.split, assign_split(e.source, e.fragment, 1));
  }
  EXPECT_TRUE(fs::exists(root_ / "ckpt" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(root_ / "ckpt" / "best.ckpt"));
  std::istringstream csv(slurp(root_ / "ckpt" / "loss.csv"));
  std::string line;
  int lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 5);  // header + 4 steps
}

TEST_F(CliTest, BuildVocabIsDeterministic) {
  ASSERT_EQ(run({"--quiet", "--threads", "3", "build-vocab", p("corpus"), "-o", p("vocab_again.json")}).code, 0);
  EXPECT_EQ(slurp(root_ / "vocab.json"), slurp(root_ / "vocab_again.json"));
}

TEST_F(CliTest, BuildVocabErrors) {
  fs::create_directories(root_ / "empty");
  const CliResult none = run({"build-vocab", p("empty"), "-o", p("x.json")});
  EXPECT_EQ(none.code, kExitUsage);
  EXPECT_NE(none.err.find("no input files"), std::string::npos);
  EXPECT_EQ(run({"build-vocab", p("corpus"), "-o", p("x.json"), "--scores", p("s2")}).code, kExitUsage);
  EXPECT_EQ(run({"build-vocab", p("corpus"), "-o", p("x.json"), "--min-notes", "100000"}).code, kExitUsage);
  EXPECT_EQ(run({"frobnicate"}).code, kExitUsage);
}

TEST_F(CliTest, EncodeDecodeRoundtrip) {
  const std::string src = p("corpus/song1.notes");
  ASSERT_EQ(run({"--quiet", "encode", src, "--vocab", p("vocab.json"), "-o", p("one.score")}).code, 0);
  ASSERT_EQ(run({"decode", p("one.score"), "--vocab", p("vocab.json"), "-o", p("one.notes")}).code, 0);
  ASSERT_EQ(run({"--quiet", "encode", p("one.notes"), "--vocab", p("vocab.json"), "-o", p("two.score")}).code, 0);
  EXPECT_EQ(slurp(root_ / "one.score"), slurp(root_ / "two.score"));
  ASSERT_EQ(run({"decode", p("one.score"), "--vocab", p("vocab.json"), "-o", p("one.mid")}).code, 0);
  EXPECT_EQ(slurp(root_ / "one.mid").substr(0, 4), "MThd");
  EXPECT_EQ(run({"encode", src, "--vocab", p("missing.json"), "-o", p("x.score")}).code, kExitState);
  EXPECT_EQ(run({"encode", p("nope.notes"), "--vocab", p("vocab.json"), "-o", p("x.score")}).code, kExitUsage);
}

TEST_F(CliTest, GenerateKeepsSources) {
  const std::string in = first_score();
  const std::vector<std::string> base = {"--seed", "5", "--quiet", "generate", in, "--ckpt", p("ckpt/last.ckpt"),
                                         "--vocab", p("vocab.json"), "--source", "bass,drum", "--target", "piano"};
  auto args = base;
  args.insert(args.end(), {"-o", p("gen1.score"), "--report", p("gen1.json")});
  const CliResult a = run(args);
  ASSERT_EQ(a.code, 0) << a.err;
  args = base;
  args.insert(args.end(), {"-o", p("gen2.score")});
  args.insert(args.begin(), {"--threads", "4"});
  ASSERT_EQ(run(args).code, 0);
  EXPECT_EQ(slurp(root_ / "gen1.score"), slurp(root_ / "gen2.score"));

  const ScoreGrid input = load_score(in);
  const ScoreGrid out = load_score(p("gen1.score"));
  EXPECT_EQ(out.count(kMask), 0);
  for (TrackRole t : {TrackRole::chord, TrackRole::bass, TrackRole::drum}) {
    for (int row : {pitch_row(t), duration_row(t)}) {
      for (int c = 0; c < input.width(); ++c) ASSERT_EQ(out.at(row, c), input.at(row, c));
    }
  }
  EXPECT_TRUE(out.track_all(TrackRole::melody, kEmpty));
  EXPECT_EQ(out.mark(TrackRole::piano), TrackMark::target);
  const auto report = nlohmann::json::parse(slurp(root_ / "gen1.json"));
  EXPECT_EQ(report["steps"], 6);
  EXPECT_EQ(report["masked_per_step"].size(), 6u);
}

TEST_F(CliTest, GenerateErrors) {
  const std::string in = first_score();
  auto gen = [&](std::vector<std::string> extra) {
    std::vector<std::string> args = {"--seed", "5", "generate", in, "--ckpt", p("ckpt/last.ckpt"), "-o", p("g.score")};
    args.insert(args.end(), extra.begin(), extra.end());
    return run(args);
  };
  const CliResult overlap = gen({"--source", "bass", "--target", "bass"});
  EXPECT_EQ(overlap.code, kExitUsage);
  EXPECT_NE(overlap.err.find("overlap"), std::string::npos);
  EXPECT_EQ(gen({"--source", "bass"}).code, kExitUsage);
  EXPECT_EQ(gen({"--target", "violin"}).code, kExitUsage);
  EXPECT_EQ(run({"generate", in, "--ckpt", p("ckpt/last.ckpt"), "-o", p("g.score"), "--target", "piano"}).code,
            kExitUsage);  // no seed
  EXPECT_EQ(run({"--seed", "5", "generate", in, "--ckpt", p("ckpt/none.ckpt"), "-o", p("g.score"), "--target", "piano"})
                .code,
            kExitState);

  // A checkpoint trained for another vocabulary is a state error.
  ScoreGrid other = load_score(in);
  ScoreGrid bigger(other.width(), other.vocab_size() + 1, kPad);
  bigger.cells() = other.cells();
  save_score(p("bigger.score"), bigger);
  EXPECT_EQ(run({"--seed", "5", "generate", p("bigger.score"), "--ckpt", p("ckpt/last.ckpt"), "-o", p("g.score"),
                 "--target", "piano"})
                .code,
            kExitState);
}

TEST_F(CliTest, FromScratch) {
  const CliResult r = run({"--seed", "6", "--quiet", "generate", "--from-scratch", "--length", "32", "--ckpt",
                     p("ckpt/last.ckpt"), "--vocab", p("vocab.json"), "--target", "melody,bass", "--chord-as-target",
                     "-o", p("scratch.score"), "--decode", p("scratch.notes")});
  ASSERT_EQ(r.code, 0) << r.err;
  const ScoreGrid g = load_score(p("scratch.score"));
  EXPECT_EQ(g.width(), 32);
  EXPECT_EQ(g.count(kMask), 0);
  EXPECT_TRUE(g.track_all(TrackRole::piano, kEmpty));
}

TEST_F(CliTest, InfillLocality) {
  const std::string in = first_score();
  const CliResult r = run({"--seed", "8", "--quiet", "infill", in, "--ckpt", p("ckpt/last.ckpt"), "--vocab",
                     p("vocab.json"), "--mask", "piano:0:8", "--mask", "bass:4:12", "-o", p("inf.score")});
  ASSERT_EQ(r.code, 0) << r.err;
  const ScoreGrid a = load_score(in);
  const ScoreGrid b = load_score(p("inf.score"));
  for (int row = 0; row < kNumRows; ++row) {
    for (int c = 0; c < a.width(); ++c) {
      const TrackRole t = track_of_row(row);
      const bool masked = (t == TrackRole::piano && c < 8) || (t == TrackRole::bass && c >= 4 && c < 12);
      if (!masked) {
        ASSERT_EQ(a.at(row, c), b.at(row, c));
      }
    }
  }
  const CliResult bad = run({"--seed", "8", "infill", in, "--ckpt", p("ckpt/last.ckpt"), "--mask", "piano:0:999", "-o",
                       p("inf2.score")});
  EXPECT_EQ(bad.code, kExitUsage);
  EXPECT_NE(bad.err.find("out of range"), std::string::npos);
}

TEST_F(CliTest, EvalIdenticalAndStats) {
  fs::create_directories(root_ / "gen");
  fs::create_directories(root_ / "ref");
  const auto manifest = CorpusManifest::from_json(slurp(root_ / "scores" / "manifest.json"));
  for (int i = 0; i < 3; ++i) {
    fs::copy_file(root_ / "scores" / manifest.entries[i].score, root_ / "gen" / manifest.entries[i].score,
                  fs::copy_options::overwrite_existing);
    fs::copy_file(root_ / "scores" / manifest.entries[i].score, root_ / "ref" / manifest.entries[i].score,
                  fs::copy_options::overwrite_existing);
  }
  const CliResult ev = run({"--quiet", "eval", "--generated", p("gen"), "--reference", p("ref"), "--vocab", p("vocab.json"),
                      "--tracks", "bass,piano,melody", "-o", p("eval.json")});
  ASSERT_EQ(ev.code, 0) << ev.err;
  const auto report = nlohmann::json::parse(slurp(root_ / "eval.json"));
  EXPECT_EQ(report["metrics"]["ca"], 1.0);
  for (const char* k : {"kl_pitch", "kl_dur", "kl_ioi"}) EXPECT_LE(report["metrics"][k].get<double>(), 1e-6);

  const CliResult st = run({"--quiet", "stats", "--manifest", p("scores/manifest.json"), "--vocab", p("vocab.json"),
                      "--split", "all", "-o", p("train_dist.json")});
  ASSERT_EQ(st.code, 0) << st.err;
  const CliResult kl = run({"--quiet", "eval", "--generated", p("gen"), "--train-dist", p("train_dist.json"), "--vocab",
                      p("vocab.json"), "--metrics", "kl_pitch,kl_dur", "-o", p("eval2.json")});
  ASSERT_EQ(kl.code, 0) << kl.err;
  const auto r2 = nlohmann::json::parse(slurp(root_ / "eval2.json"));
  EXPECT_EQ(r2["metrics"].size(), 2u);
  EXPECT_GE(r2["metrics"]["kl_pitch"].get<double>(), 0.0);

  EXPECT_EQ(run({"eval", "--generated", p("gen"), "--train-dist", p("train_dist.json"), "--vocab", p("vocab.json"),
                 "--metrics", "ca"})
                .code,
            kExitUsage);
  fs::copy_file(root_ / "gen" / manifest.entries[0].score, root_ / "gen" / "extra.score",
                fs::copy_options::overwrite_existing);
  const CliResult unpaired = run({"eval", "--generated", p("gen"), "--reference", p("ref"), "--vocab", p("vocab.json")});
  EXPECT_EQ(unpaired.code, kExitUsage);
  EXPECT_NE(unpaired.err.find("extra.score"), std::string::npos);
  fs::remove(root_ / "gen" / "extra.score");
}

TEST_F(CliTest, TrainStateErrors) {
  EXPECT_EQ(run({"--seed", "1", "train", "--manifest", p("scores/manifest.json"), "--vocab", p("nope.json"), "--out",
                 p("ck2"), "--steps", "1"})
                .code,
            kExitState);
  EXPECT_EQ(run({"--seed", "1", "train", "--manifest", p("nope/manifest.json"), "--vocab", p("vocab.json"), "--out",
                 p("ck2"), "--steps", "1"})
                .code,
            kExitState);
}

}  // namespace
}  // namespace trackdiff
