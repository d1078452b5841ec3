#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "confcorr/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = confcorr::run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string first_line(const fs::path& p) {
  std::ifstream in(p);
  std::string line;
  std::getline(in, line);
  return line;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("confcorr_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path synth(std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"synth", "--out", (dir_ / "synth").string(), "--n-samples", "40"};
    args.insert(args.end(), extra.begin(), extra.end());
    auto r = run(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return dir_ / "synth" / "records.jsonl";
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, ValidateClean) {
  auto recs = synth();
  auto r = run({"validate", "-i", recs.string()});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("0 violations"), std::string::npos);
}

TEST_F(Cli, ValidateBadLine) {
  auto recs = synth();
  std::ifstream in(recs);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  auto bad = json::parse(lines[4]);
  bad["hypothesis"]["token_logprobs"].push_back(-0.5);
  lines[4] = bad.dump();
  const auto broken = dir_ / "broken.jsonl";
  std::ofstream out(broken);
  for (const auto& l : lines) out << l << '\n';
  out.close();
  auto r = run({"validate", "-i", broken.string()});
  EXPECT_EQ(r.code, confcorr::kExitValidation);
  EXPECT_NE(r.out.find("line 5"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("1 violations"), std::string::npos) << r.out;
}

TEST_F(Cli, MissingFileIsIoExit) {
  EXPECT_EQ(run({"validate", "-i", (dir_ / "nope.jsonl").string()}).code, confcorr::kExitIo);
  EXPECT_EQ(run({"score", "-i", (dir_ / "nope.jsonl").string(), "-o", dir_.string()}).code, confcorr::kExitIo);
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(run({}).code, confcorr::kExitUsage);
  EXPECT_EQ(run({"score"}).code, confcorr::kExitUsage);
  EXPECT_EQ(run({"bogus"}).code, confcorr::kExitUsage);
  EXPECT_EQ(run({"score", "-i", "x", "--format", "xml"}).code, confcorr::kExitUsage);
  EXPECT_EQ(run({"--help"}).code, confcorr::kExitOk);
}

TEST_F(Cli, ScoreColumnContract) {
  auto recs = synth();
  auto r = run({"score", "-i", recs.string(), "-o", (dir_ / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(first_line(dir_ / "s" / "scores.csv"),
            "sample_id,model,task,epoch,seed,n_train_samples,avg_tok_prob,avg_tok_ent,do_ent,bs_imp_wt,bs_ratios,"
            "bs_sums,do_bleu_var,do_kl_div,do_meteor_var,cocoa_msp,cocoa_mte,cocoa_ppl,chrf_plus,token_f1,exact_match,"
            "correctness_label,train_similarity");
  auto meta = json::parse(slurp(dir_ / "s" / "metadata.json"));
  EXPECT_EQ(meta["config"]["command"], "score");
}

TEST_F(Cli, ScoreSingleMetric) {
  auto recs = synth();
  auto r = run({"score", "-i", recs.string(), "-o", (dir_ / "s").string(), "--metrics", "avg_tok_prob", "--quality",
                "token_f1", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto doc = json::parse(slurp(dir_ / "s" / "scores.json"));
  ASSERT_EQ(doc["columns"]["metrics"].size(), 1u);
  EXPECT_EQ(doc["columns"]["metrics"][0]["name"], "avg_tok_prob");
  EXPECT_TRUE(doc["rows"][0]["metrics"].contains("avg_tok_prob"));
  EXPECT_FALSE(fs::exists(dir_ / "s" / "scores.csv"));
  EXPECT_EQ(run({"score", "-i", recs.string(), "-o", (dir_ / "s").string(), "--metrics", "nope"}).code,
            confcorr::kExitUsage);
}

TEST_F(Cli, ScoreNoBeamsGivesEmptyCellsAndWarning) {
  auto recs = synth();
  std::ifstream in(recs);
  std::ofstream out(dir_ / "nobeams.jsonl");
  std::string line;
  std::getline(in, line);
  out << line << '\n';
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    j.erase("beams");
    out << j.dump() << '\n';
  }
  out.close();
  auto r = run({"score", "-i", (dir_ / "nobeams.jsonl").string(), "-o", (dir_ / "s").string(), "--metrics",
                "bs_sums,avg_tok_prob"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos) << r.err;
  std::ifstream csv(dir_ / "s" / "scores.csv");
  std::getline(csv, line);
  std::getline(csv, line);
  // sample_id,model,task,epoch,seed,n_train_samples,bs_sums,avg_tok_prob,...
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_GE(cells.size(), 8u);
  EXPECT_EQ(cells[6], "");
  EXPECT_NE(cells[7], "");
}

TEST_F(Cli, CorrelateDeltasAndAnova) {
  auto recs = synth({"--pre-sft", "--seeds", "1,2,3", "--n-epochs", "2"});
  auto s = run({"score", "-i", recs.string(), "-o", (dir_ / "s").string(), "--format", "json"});
  ASSERT_EQ(s.code, 0) << s.err;
  auto r = run({"correlate", "-i", (dir_ / "s" / "scores.json").string(), "-o", (dir_ / "c").string(), "--quality",
                "token_f1", "--anova", "epoch"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir_ / "c" / "correlations.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "c" / "correlation_summary.csv"));
  EXPECT_TRUE(fs::exists(dir_ / "c" / "significance.csv"));
  const auto deltas = slurp(dir_ / "c" / "correlation_delta_summary.csv");
  EXPECT_NE(deltas.find("pre_post"), std::string::npos);
  EXPECT_NE(deltas.find("first_post"), std::string::npos);
}

TEST_F(Cli, CorrelateQualityCoupledIsPerfectForProbabilityMetrics) {
  auto recs = synth({"--drift", "quality_coupled", "--n-epochs", "1"});
  auto r = run({"correlate", "-i", recs.string(), "-o", (dir_ / "c").string(), "--quality", "token_f1", "--metrics",
                "avg_tok_prob,bs_imp_wt", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto doc = json::parse(slurp(dir_ / "c" / "correlations.json"));
  ASSERT_EQ(doc["rows"].size(), 2u);
  for (const auto& row : doc["rows"]) EXPECT_DOUBLE_EQ(row["rho"].get<double>(), 1.0) << row.dump();
}

TEST_F(Cli, DynamicsMissingEpochIsPairingError) {
  auto recs = synth({"--n-epochs", "2"});
  auto r = run({"dynamics", "-i", recs.string(), "-o", (dir_ / "d").string(), "--to-epoch", "9"});
  EXPECT_EQ(r.code, confcorr::kExitValidation);
  EXPECT_NE(r.err.find("no epoch 9"), std::string::npos) << r.err;
}

TEST_F(Cli, DynamicsWritesTables) {
  auto recs = synth({"--n-epochs", "3", "--drift", "uniform_logprob_inflation"});
  auto r = run({"dynamics", "-i", recs.string(), "-o", (dir_ / "d").string(), "--metrics", "avg_tok_prob", "--quality",
                "token_f1", "--per-sample-dump"});
  ASSERT_EQ(r.code, 0) << r.err;
  for (auto name : {"quadrants", "pair_cases", "quadrants_by_epoch", "trajectory", "trajectory_drops", "samples"})
    EXPECT_TRUE(fs::exists(dir_ / "d" / (std::string(name) + ".csv"))) << name;
}

TEST_F(Cli, DetectNeedsLabels) {
  auto recs = synth();
  std::ifstream in(recs);
  std::ofstream out(dir_ / "nolabels.jsonl");
  std::string line;
  std::getline(in, line);
  out << line << '\n';
  while (std::getline(in, line)) {
    auto j = json::parse(line);
    j.erase("correctness_label");
    out << j.dump() << '\n';
  }
  out.close();
  auto r = run({"detect", "-i", (dir_ / "nolabels.jsonl").string(), "-o", (dir_ / "t").string()});
  EXPECT_EQ(r.code, confcorr::kExitValidation);
  EXPECT_NE(r.err.find("correctness_label"), std::string::npos) << r.err;

  auto ok = run({"detect", "-i", recs.string(), "-o", (dir_ / "t").string(), "--metrics", "avg_tok_prob"});
  EXPECT_EQ(ok.code, 0) << ok.err;
  EXPECT_TRUE(fs::exists(dir_ / "t" / "detection.csv"));
}

TEST_F(Cli, SynthIsDeterministic) {
  synth({"--seeds", "4"});
  const auto a = slurp(dir_ / "synth" / "records.jsonl");
  const auto ga = slurp(dir_ / "synth" / "ground_truth.json");
  fs::remove_all(dir_ / "synth");
  synth({"--seeds", "4"});
  EXPECT_EQ(a, slurp(dir_ / "synth" / "records.jsonl"));
  EXPECT_EQ(ga, slurp(dir_ / "synth" / "ground_truth.json"));
  fs::remove_all(dir_ / "synth");
  synth({"--seeds", "5"});
  EXPECT_NE(a, slurp(dir_ / "synth" / "records.jsonl"));
}
