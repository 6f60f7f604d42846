// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "affseq/audio_io.hpp"
#include "affseq/dataset.hpp"
#include "affseq/error.hpp"
#include "cli.hpp"
#include "fixture.hpp"
#include "synthetic.hpp"
#include "temp_dir.hpp"

using namespace affseq;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t line_count(const fs::path& p) {
  auto s = slurp(p);
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

// Tiny-model settings shared by the training fixtures.
const std::vector<std::string> kTinyModel = {
    "--model.audio-dim",     "21",   "--model.expnet-dim",   "256",  "--model.facepose-dim",
    "90",                    "--model.audio-units", "16,8", "--model.expnet-units", "32,32,8",
    "--model.facepose-units", "16,8", "--model.head-units",   "8"};

fs::path toy_manifest(const std::string& name, std::size_t n_val = 1) {
  testkit::SyntheticSpec spec;
  spec.n_videos = 2;
  spec.n_frames = 20;
  auto train = testkit::make_synthetic_videos(spec, 99, "tr");
  spec.n_videos = n_val;
  spec.seed = 5;
  auto val = testkit::make_synthetic_videos(spec, 99, "va");
  return testkit::write_manifest(testkit::fresh_dir(name), train, val);
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST(Cli, HelpListsEveryKeyAndFlagsAreBijective) {
  for (const auto& sub : cli::subcommands()) {
    auto r = run({sub, "--help"});
    EXPECT_EQ(r.code, 0) << sub;
    std::set<std::string> flags;
    for (const auto& k : cli::subcommand_keys(sub)) {
      auto flag = cli::flag_for_key(k.key);
      EXPECT_NE(r.out.find(flag + " "), std::string::npos) << sub << " " << flag;
      EXPECT_NE(r.out.find("[key: " + k.key), std::string::npos) << sub << " " << k.key;
      EXPECT_EQ(cli::key_for_flag(flag), k.key);
      EXPECT_TRUE(flags.insert(flag).second) << "duplicate flag " << flag;
    }
  }
}

TEST(Cli, ExtractAudioWritesFeatureFile) {
  auto dir = testkit::fresh_dir("cli_extract");
  std::vector<double> samples(16000);
  for (std::size_t i = 0; i < samples.size(); ++i) samples[i] = 0.3 * std::sin(0.05 * i);
  write_wav_pcm16(dir / "a.wav", samples, 16000);
  auto r = run({"extract-audio", "--wav", (dir / "a.wav").string(), "--frames", "10", "--out",
                (dir / "a.bin").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto t = load_feature_track(dir / "a.bin", Modality::audio);
  EXPECT_EQ(t.rows, 10u);
  EXPECT_EQ(t.cols, 168u);

  auto zero = run({"extract-audio", "--wav", (dir / "a.wav").string(), "--frames", "0", "--out",
                   (dir / "z.bin").string()});
  EXPECT_EQ(zero.code, 3);
  EXPECT_NE(zero.err.find("n_frames must be ≥ 1"), std::string::npos) << zero.err;

  auto missing = run({"extract-audio", "--wav", (dir / "none.wav").string(), "--frames", "3",
                      "--out", (dir / "m.bin").string()});
  EXPECT_EQ(missing.code, 2);

  auto bad_fmax = run({"extract-audio", "--wav", (dir / "a.wav").string(), "--frames", "3",
                       "--out", (dir / "f.bin").string(), "--fmax", "9000"});
  EXPECT_EQ(bad_fmax.code, 3);
}

TEST(Cli, ConfigFileRulesAndPrecedence) {
  auto dir = testkit::fresh_dir("cli_config");
  std::vector<double> samples(8000, 0.0);
  write_wav_pcm16(dir / "s.wav", samples, 8000);
  {
    std::ofstream(dir / "bad.cfg") << "# comment\nn_mels = 64\nbogus_key = 3\n";
  }
  auto bad = run({"extract-audio", "--config", (dir / "bad.cfg").string(), "--wav",
                  (dir / "s.wav").string(), "--frames", "2", "--out", (dir / "o.bin").string()});
  EXPECT_EQ(bad.code, 3);
  EXPECT_NE(bad.err.find(":3: unknown key 'bogus_key'"), std::string::npos) << bad.err;

  {
    std::ofstream(dir / "ok.cfg") << "n_mels = 64\nn_mfcc = 20\nframes = 4\n";
  }
  auto file_only = run({"extract-audio", "--config", (dir / "ok.cfg").string(), "--wav",
                        (dir / "s.wav").string(), "--out", (dir / "f.bin").string()});
  ASSERT_EQ(file_only.code, 0) << file_only.err;
  auto f = load_feature_track(dir / "f.bin", Modality::audio, 84);
  EXPECT_EQ(f.rows, 4u);

  auto flag_wins = run({"extract-audio", "--config", (dir / "ok.cfg").string(), "--wav",
                        (dir / "s.wav").string(), "--out", (dir / "g.bin").string(), "--n-mels",
                        "32", "--frames", "3"});
  ASSERT_EQ(flag_wins.code, 0) << flag_wins.err;
  auto g = load_feature_track(dir / "g.bin", Modality::audio, 52);
  EXPECT_EQ(g.rows, 3u);

  auto unknown_flag = run({"extract-audio", "--no-such-flag", "1"});
  EXPECT_EQ(unknown_flag.code, 3);
}

TEST(Cli, ThreadsDefaultFromEnvironment) {
  ::setenv("AFFSEQ_THREADS", "3", 1);
  auto r = run({"train", "--help"});
  ::unsetenv("AFFSEQ_THREADS");
  EXPECT_NE(r.out.find("[key: threads, default: 3]"), std::string::npos) << r.out;
}

TEST(Cli, TrainEvaluatePredict) {
  auto manifest = toy_manifest("cli_train");
  auto out = manifest.parent_path() / "run";
  auto r = run(with({"train", "--manifest", manifest.string(), "--out", out.string(), "--epochs",
                     "2", "--batch-size", "2", "--seed", "7"},
                    kTinyModel));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(line_count(out / "history.csv"), 3u);
  ASSERT_TRUE(fs::exists(out / "best.ckpt"));

  auto eval = run({"evaluate", "--manifest", manifest.string(), "--checkpoint",
                   (out / "best.ckpt").string(), "--out", (out / "report.csv").string()});
  ASSERT_EQ(eval.code, 0) << eval.err;
  auto report = slurp(out / "report.csv");
  EXPECT_EQ(report.rfind("metric,valence,arousal\nccc,", 0), 0u);
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 3);

  auto pred = run({"predict", "--manifest", manifest.string(), "--checkpoint",
                   (out / "best.ckpt").string(), "--out", (out / "pred").string()});
  ASSERT_EQ(pred.code, 0) << pred.err;
  for (const char* id : {"tr0", "tr1", "va0"}) {
    auto p = out / "pred" / (std::string(id) + ".csv");
    ASSERT_TRUE(fs::exists(p)) << p;
    EXPECT_EQ(line_count(p), 21u);
  }

  auto missing = run({"evaluate", "--manifest", manifest.string(), "--checkpoint",
                      (out / "nope.ckpt").string()});
  EXPECT_EQ(missing.code, 2);

  auto wrong_split = run({"predict", "--manifest", manifest.string(), "--checkpoint",
                          (out / "best.ckpt").string(), "--out", (out / "p2").string(),
                          "--split", "test"});
  EXPECT_EQ(wrong_split.code, 3);
}

TEST(Cli, TrainWithoutValRowsIsConfigError) {
  auto manifest = toy_manifest("cli_no_val", 0);
  auto r = run(with({"train", "--manifest", manifest.string(), "--out",
                     (manifest.parent_path() / "run").string(), "--epochs", "1"},
                    kTinyModel));
  EXPECT_EQ(r.code, 3) << r.err;
}

TEST(Cli, AudioOnlyVariantTrains) {
  auto manifest = toy_manifest("cli_audio_only");
  auto out = manifest.parent_path() / "run";
  auto r = run(with({"train", "--manifest", manifest.string(), "--out", out.string(), "--epochs",
                     "1", "--model.variant", "audio_only"},
                    kTinyModel));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("training audio_only/gru"), std::string::npos);
}

TEST(Cli, EvaluatePerfectPredictions) {
  auto manifest = toy_manifest("cli_perfect");
  auto dir = manifest.parent_path();
  fs::create_directories(dir / "preds");
  for (const auto& e : load_manifest(manifest)) {
    if (e.split != Split::val) continue;
    fs::copy_file(e.label_path, dir / "preds" / (e.video_id + ".csv"));
  }
  auto r = run({"evaluate", "--manifest", manifest.string(), "--predictions",
                (dir / "preds").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("metric,valence,arousal\nccc,1,1\nmse,0,0\n", 0), 0u) << r.out;
}

TEST(Cli, NumericFaultExitCode) {
  auto manifest = toy_manifest("cli_fault");
  auto r = run(with({"train", "--manifest", manifest.string(), "--out",
                     (manifest.parent_path() / "run").string(), "--epochs", "3",
                     "--learning-rate", "1e300", "--grad-clip", "0", "--batch-size", "1"},
                    kTinyModel));
  EXPECT_EQ(r.code, 4) << r.out << r.err;
}

TEST(Cli, ExitCodeMapping) {
  EXPECT_EQ(cli::exit_code_for(IoError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(ChecksumError("x")), 2);
  EXPECT_EQ(cli::exit_code_for(TruncationError("x", 4, 2)), 2);
  EXPECT_EQ(cli::exit_code_for(ConfigError("x")), 3);
  EXPECT_EQ(cli::exit_code_for(DomainError("x")), 3);
  EXPECT_EQ(cli::exit_code_for(CoverageError("x")), 3);
  EXPECT_EQ(cli::exit_code_for(NumericFault("x")), 4);
  EXPECT_EQ(cli::exit_code_for(std::runtime_error("x")), 1);
}
