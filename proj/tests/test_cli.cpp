#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gril/cli/app.hpp"
#include "helpers.hpp"

namespace fs = std::filesystem;
using gril::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "gril");
  std::ostringstream out, err;
  int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    root = fs::temp_directory_path() / ("gril_cli_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(root);
    fs::create_directories(root);
  }
  void TearDown() override { fs::remove_all(root); }

  fs::path gen(std::size_t n = 60) {
    auto r = call({"gen-data", "--out", (root / "data").string(), "--num_questions", std::to_string(n), "--seed", "3"});
    EXPECT_EQ(r.code, 0) << r.err;
    return root / "data";
  }

  std::vector<std::string> small_flags() {
    return {"--dim", "8", "--llm_dim", "8", "--bridge_hidden", "8", "--reasoner_hidden", "4", "--epochs", "2", "--learning_rate", "0.01"};
  }

  fs::path root;
};

}  // namespace

TEST_F(Cli, GenDataWritesCorpus) {
  fs::path d = gen();
  for (const char* f : {"kg.tsv", "train.jsonl", "dev.jsonl", "test.jsonl", "summary.json"}) EXPECT_TRUE(fs::exists(d / f)) << f;
  auto summary = nlohmann::json::parse(slurp(d / "summary.json"));
  EXPECT_EQ(summary["train"].get<int>() + summary["dev"].get<int>() + summary["test"].get<int>(), 60);
  EXPECT_EQ(gril::read_dataset(d / "dev.jsonl").size(), 6u);
}

TEST_F(Cli, PerfectPredictionsScoreOne) {
  fs::path d = gen();
  auto gold = gril::read_dataset(d / "test.jsonl");
  {
    std::ofstream p(root / "pred.jsonl");
    for (auto& s : gold) p << nlohmann::json{{"ranked", s.answers}, {"predicted", s.answers}}.dump() << '\n';
  }
  auto r = call({"eval", "--out", (root / "ev").string(), "--dataset", (d / "test.jsonl").string(), "--predictions",
                 (root / "pred.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rep = nlohmann::json::parse(slurp(root / "ev" / "report.json"));
  EXPECT_EQ(rep["hits_at_1"].get<double>(), 1.0);
  EXPECT_EQ(rep["f1"].get<double>(), 1.0);
}

TEST_F(Cli, ConfigErrorIsOneJsonLine) {
  fs::path d = gen();
  auto r = call({"train", "--out", (root / "m").string(), "--kg", (d / "kg.tsv").string(), "--train",
                 (d / "train.jsonl").string(), "--sigma", "7"});
  EXPECT_EQ(r.code, 2);
  ASSERT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
  auto j = nlohmann::json::parse(r.err);
  EXPECT_EQ(j["error"], "config");
  EXPECT_FALSE(fs::exists(root / "m"));

  auto unknown = call({"train", "--out", (root / "m").string(), "--sigmaa", "0.1"});
  EXPECT_EQ(unknown.code, 2);
  EXPECT_EQ(nlohmann::json::parse(unknown.err)["error"], "config");
  EXPECT_EQ(call({}).code, 2);
}

TEST_F(Cli, DataErrorsExitThree) {
  {
    std::ofstream bad(root / "bad.tsv");
    bad << "a\tr\tb\nbroken line\n";
  }
  gen();
  auto r = call({"train", "--out", (root / "m").string(), "--kg", (root / "bad.tsv").string(), "--train",
                 (root / "data" / "train.jsonl").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "data");
  EXPECT_NE(r.err.find("2"), std::string::npos);  // line number
  EXPECT_FALSE(fs::exists(root / "m"));
}

TEST_F(Cli, FailureLeavesNoPartialFiles) {
  fs::path d = gen();
  fs::create_directories(root / "keep");
  {
    std::ofstream(root / "keep" / "mine.txt") << "x";
  }
  // mismatched number of predictions: fails after the output dir exists
  {
    std::ofstream p(root / "pred.jsonl");
    p << nlohmann::json{{"ranked", {"x"}}}.dump() << '\n';
  }
  auto r = call({"eval", "--out", (root / "keep").string(), "--dataset", (d / "test.jsonl").string(), "--predictions",
                 (root / "pred.jsonl").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_TRUE(fs::exists(root / "keep" / "mine.txt"));
  EXPECT_FALSE(fs::exists(root / "keep" / "report.json"));
}

TEST_F(Cli, HelpListsEveryConfigKey) {
  auto r = call({"train", "--help"});
  EXPECT_EQ(r.code, 0);
  for (const auto& f : gril::config_fields()) {
    EXPECT_NE(r.out.find("--" + f.key), std::string::npos) << f.key;
  }
  EXPECT_NE(r.out.find("(default: 0.5)"), std::string::npos);
}

TEST_F(Cli, TrainTwiceGivesIdenticalCheckpoints) {
  fs::path d = gen();
  std::vector<std::string> base{"train", "--kg", (d / "kg.tsv").string(), "--train", (d / "train.jsonl").string(), "--dev",
                                (d / "dev.jsonl").string()};
  for (auto& f : small_flags()) base.push_back(f);
  for (const char* name : {"m1", "m2"}) {
    auto args = base;
    args.push_back("--out");
    args.push_back((root / name).string());
    auto r = call(args);
    ASSERT_EQ(r.code, 0) << r.err;
  }
  EXPECT_EQ(slurp(root / "m1" / "model.ckpt"), slurp(root / "m2" / "model.ckpt"));
  EXPECT_EQ(nlohmann::json::parse(slurp(root / "m1" / "config.json"))["dim"], 8);
  std::ifstream curve(root / "m1" / "curve.jsonl");
  std::string line;
  std::size_t n = 0;
  while (std::getline(curve, line)) ++n;
  EXPECT_EQ(n, 2u);

  // retrieve and eval from the checkpoint
  auto rr = call({"retrieve", "--out", (root / "r").string(), "--kg", (d / "kg.tsv").string(), "--checkpoint",
                  (root / "m1" / "model.ckpt").string(), "--dataset", (d / "test.jsonl").string()});
  ASSERT_EQ(rr.code, 0) << rr.err;
  auto first = nlohmann::json::parse(slurp(root / "r" / "prompts.jsonl").substr(0, slurp(root / "r" / "prompts.jsonl").find('\n')));
  EXPECT_EQ(first["prompt"].get<std::string>().rfind("[Graph Token] Based on", 0), 0u);
  for (const char* name : {"e1", "e2"}) {
    auto er = call({"eval", "--out", (root / name).string(), "--kg", (d / "kg.tsv").string(), "--checkpoint",
                    (root / "m1" / "model.ckpt").string(), "--dataset", (d / "test.jsonl").string(), "--no-timing"});
    ASSERT_EQ(er.code, 0) << er.err;
  }
  EXPECT_EQ(slurp(root / "e1" / "report.json"), slurp(root / "e2" / "report.json"));
}

TEST_F(Cli, CamThenAblate) {
  fs::path d = gen(80);
  std::vector<std::string> cam{"train-cam", "--out", (root / "cam").string(), "--train", (d / "train.jsonl").string(), "--dim",
                               "8", "--cam_epochs", "20"};
  auto c = call(cam);
  ASSERT_EQ(c.code, 0) << c.err;
  EXPECT_TRUE(fs::exists(root / "cam" / "cam.ckpt"));

  std::vector<std::string> args{"ablate", "--out", (root / "ab").string(), "--kg", (d / "kg.tsv").string(), "--train",
                                (d / "train.jsonl").string(), "--dev", (d / "dev.jsonl").string(), "--cam",
                                (root / "cam" / "cam.ckpt").string(), "--use_cam", "true", "--arms",
                                "full,w/o pruning,separate"};
  for (auto& f : small_flags()) args.push_back(f);
  auto r = call(args);
  ASSERT_EQ(r.code, 0) << r.err;
  auto rows = nlohmann::json::parse(slurp(root / "ab" / "ablation.json"));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[1]["arm"], "w/o pruning");
  std::ifstream tsv(root / "ab" / "ablation.tsv");
  std::string line;
  std::size_t n = 0;
  while (std::getline(tsv, line)) ++n;
  EXPECT_EQ(n, 4u);

  *(std::find(args.begin(), args.end(), "--arms") + 1) = "nonsense";
  auto bad = call(args);
  EXPECT_EQ(bad.code, 2);
}
