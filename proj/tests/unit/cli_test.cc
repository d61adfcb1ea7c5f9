/*
 * Copyright 2026 The pcbm Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "pcbm/cli.h"
#include "pcbm/editor.h"
#include "pcbm/emb1.h"
#include "pcbm/pcbm_model.h"
#include "test_util.h"

namespace pcbm {
namespace {

using nlohmann::json;
using testing::TempDir;

struct Result {
  int code = 0;
  std::string out, err;
  json Json() const { return json::parse(out); }
};

Result Cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r;
  r.code = RunCli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// synth → learn-concepts → train, shared by the flow tests.
class CliFlow : public ::testing::Test {
 protected:
  void SetUp() override {
    ASSERT_EQ(Cli({"synth", "--kind", "shift", "--seed", "2", "--out", s("sc"), "--log-level", "quiet"}).code, 0);
    ASSERT_EQ(Cli({"learn-concepts", "--dataset", s("sc/probes"), "--concepts", s("sc/probes.jsonl"),
                   "--out", s("bank"), "--log-level", "quiet"}).code, 0);
    ASSERT_EQ(Cli({"train", "--dataset", s("sc/train"), "--bank", s("bank"), "--out", s("model"),
                   "--log-level", "quiet"}).code, 0);
    shifted_ = ReadJsonFile(dir_ / "sc" / "report.json")["shifted_class"];
  }
  std::string s(const std::string& rel) const { return (dir_ / rel).string(); }

  TempDir dir_;
  std::string shifted_;
};

TEST_F(CliFlow, ExplainListsTopThree) {
  const Result r = Cli({"explain", "--model", s("model"), "--class", shifted_, "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json top = r.Json()["classes"][0]["top"];
  ASSERT_EQ(top.size(), 3u);
  EXPECT_GE(top[0]["weight"].get<double>(), top[1]["weight"].get<double>());
  EXPECT_GE(top[1]["weight"].get<double>(), top[2]["weight"].get<double>());
  const Result all = Cli({"explain", "--model", s("model"), "--json"});
  EXPECT_EQ(all.Json()["classes"].size(), 5u);
}

TEST_F(CliFlow, EditPreservesRowL1AndLogs) {
  const json top = Cli({"explain", "--model", s("model"), "--class", shifted_, "--json"})
                       .Json()["classes"][0]["top"];
  const std::string concept_name = top[0]["concept"];
  const Result r = Cli({"edit", "--model", s("model"), "--bank", s("bank"), "--class", shifted_,
                        "--strategy", "prune_normalize", "--concepts", concept_name, "--test",
                        s("sc/test"), "--out", s("edited"), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = r.Json();
  EXPECT_NEAR(rep["row_l1_after"].get<double>(), rep["row_l1_before"].get<double>(),
              1e-9 * rep["row_l1_before"].get<double>());
  EXPECT_EQ(rep["pruned"], json::array({concept_name}));

  const PCBMModel before = LoadPcbmModel(dir_ / "model");
  const PCBMModel after = LoadPcbmModel(dir_ / "edited" / "model");
  const int k = static_cast<int>(std::find(before.class_names.begin(), before.class_names.end(), shifted_) -
                                 before.class_names.begin());
  EXPECT_TRUE(OnlyRowChanged(before, after, k));
  const auto log = ReadEditLog(dir_ / "edited" / "edit_log.jsonl");
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].concepts, std::vector<std::string>{concept_name});
  EXPECT_EQ(log[0].class_name, shifted_);
}

TEST_F(CliFlow, HybridEvalAndConsistency) {
  ASSERT_EQ(Cli({"train-hybrid", "--model", s("model"), "--dataset", s("sc/train"), "--bank",
                 s("bank"), "--out", s("hybrid"), "--log-level", "quiet"}).code, 0);
  const Result acc = Cli({"eval", "--model", s("hybrid"), "--bank", s("bank"), "--dataset",
                          s("sc/test"), "--json"});
  ASSERT_EQ(acc.code, 0) << acc.err;
  EXPECT_GT(acc.Json()["overall"].get<double>(), 0.5);
  const Result auroc = Cli({"eval", "--model", s("model"), "--bank", s("bank"), "--dataset",
                            s("sc/test"), "--metric", "auroc", "--json"});
  ASSERT_EQ(auroc.code, 0) << auroc.err;
  const Result cons = Cli({"consistency", "--model", s("hybrid"), "--bank", s("bank"), "--dataset",
                           s("sc/test"), "--bins", "5", "--json"});
  ASSERT_EQ(cons.code, 0) << cons.err;
  EXPECT_EQ(cons.Json()["bins"].size(), 5u);
}

TEST_F(CliFlow, RunRecordCapturesResolvedOptions) {
  const json run = ReadJsonFile(dir_ / "model" / "run.json");
  EXPECT_EQ(run["tool"], "pcbm");
  EXPECT_EQ(run["options"]["lambda"], "0.01");
  EXPECT_EQ(run["options"]["select-lambda"], false);
  EXPECT_FALSE(run["options"].contains("help"));
}

TEST_F(CliFlow, ConfigFileWithCommandLineOverride) {
  WriteJsonFile(dir_ / "cfg.json", {{"top-k", 2}, {"class", shifted_}});
  Result r = Cli({"explain", "--model", s("model"), "--config", s("cfg.json"), "--json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.Json()["classes"][0]["top"].size(), 2u);
  r = Cli({"explain", "--model", s("model"), "--config", s("cfg.json"), "--top-k", "4", "--json"});
  EXPECT_EQ(r.Json()["classes"][0]["top"].size(), 4u);
  WriteJsonFile(dir_ / "bad.json", {{"no-such-option", 1}});
  EXPECT_EQ(Cli({"explain", "--model", s("model"), "--config", s("bad.json")}).code, 2);
}

TEST_F(CliFlow, RuntimeErrorsExitOneWithJson) {
  const Result r = Cli({"edit", "--model", s("model"), "--bank", s("bank"), "--class", shifted_,
                        "--strategy", "prune", "--concepts", "not_a_concept", "--test", s("sc/test"),
                        "--out", s("e2")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(json::parse(r.err)["code"], "argument_error");
  const Result missing = Cli({"train", "--dataset", s("nowhere"), "--bank", s("bank"), "--out", s("m2")});
  EXPECT_EQ(missing.code, 1);
  EXPECT_EQ(json::parse(missing.err)["code"], "not_found");
}

TEST(CliTool, UsageErrorsExitTwo) {
  EXPECT_EQ(Cli({}).code, 2);
  EXPECT_EQ(Cli({"frobnicate"}).code, 2);
  EXPECT_EQ(Cli({"train", "--dataset", "x"}).code, 2);
  EXPECT_EQ(Cli({"eval", "--metric", "f1", "--model", "m", "--dataset", "d"}).code, 2);
  EXPECT_EQ(Cli({"--help"}).code, 0);
  EXPECT_EQ(Cli({"--version"}).code, 0);
}

TEST(CliTool, DemoIsByteIdentical) {
  const Result a = Cli({"demo", "--seed", "6", "--json"});
  const Result b = Cli({"demo", "--seed", "6", "--json", "--log-level", "quiet"});
  ASSERT_EQ(a.code, 0) << a.err;
  EXPECT_EQ(a.out, b.out);
  EXPECT_TRUE(b.err.empty());
  const json j = a.Json();
  for (const char* key : {"concepts", "pcbm", "hybrid", "edits", "explain", "consistency"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  EXPECT_NE(Cli({"demo", "--seed", "7", "--json"}).out, a.out);
  const Result human = Cli({"demo", "--seed", "6"});
  EXPECT_EQ(human.out, Cli({"demo", "--seed", "6"}).out);
}

TEST(CliTool, InstalledBinaryRuns) {
  TempDir dir;
  const std::string out = (dir / "demo.json").string();
  const std::string cmd = std::string("\"") + PCBM_CLI_PATH + "\" demo --seed 1 --json --log-level quiet > \"" + out + "\"";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(ss.str(), Cli({"demo", "--seed", "1", "--json"}).out);
}

}  // namespace
}  // namespace pcbm
