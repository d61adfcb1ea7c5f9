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

#include <algorithm>
#include <atomic>
#include <fstream>
#include <thread>

#include "httplib.h"
#include "pcbm/conceptnet.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "test_util.h"

namespace pcbm {
namespace {

using nlohmann::json;
using testing::TempDir;

const std::filesystem::path kFixtures = std::filesystem::path(PCBM_FIXTURE_DIR) / "conceptnet";

// Serves the fixture directory the way the public API answers /query.
class FakeConceptNet {
 public:
  FakeConceptNet() {
    server_.Get("/query", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests_;
      const std::string node = req.get_param_value("node");
      const std::string rel = req.get_param_value("rel");
      last_limit_ = req.get_param_value("limit");
      if (node == "/c/en/broken") {
        res.status = 503;
        return;
      }
      const auto file = kFixtures / (node.substr(6) + "__" + rel.substr(3) + ".json");
      if (!std::filesystem::exists(file)) {
        res.set_content(json{{"edges", json::array()}}.dump(), "application/json");
        return;
      }
      res.set_content(ReadJsonFile(file).dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeConceptNet() {
    server_.stop();
    thread_.join();
  }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }
  int requests() const { return requests_; }
  std::string last_limit() const { return last_limit_; }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  std::string last_limit_;
};

bool Contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

TEST(ConceptNet, NodeNames) {
  EXPECT_EQ(ConceptNetNode("cat"), "/c/en/cat");
  EXPECT_EQ(ConceptNetNode("Ice Cream"), "/c/en/ice_cream");
  EXPECT_EQ(ConceptNetNode("  Sea  Lion "), "/c/en/sea_lion");
}

TEST(ConceptNet, RelationParsing) {
  EXPECT_EQ(ParseRelation("HasA"), Relation::kHasA);
  EXPECT_EQ(ParseRelation("has_a"), Relation::kHasA);
  EXPECT_EQ(ParseRelation("part-of"), Relation::kPartOf);
  EXPECT_EQ(RelationName(Relation::kHasProperty), "HasProperty");
  EXPECT_EQ(AllRelations().size(), 5u);
  EXPECT_THROW(ParseRelation("Synonym"), ArgumentError);
}

TEST(ConceptNet, ParsesFixtureResponse) {
  const auto names = ParseQueryResponse(ReadJsonFile(kFixtures / "cat__HasA.json"), "cat");
  EXPECT_EQ(names, (std::vector<std::string>{"whiskers", "fur", "claws", "four legs", "tail",
                                             "sharp teeth"}));
}

// Independent reading of the fixture: every English far end, by label.
std::vector<std::string> ScanFixture(const json& body, const std::string& node) {
  std::vector<std::string> out;
  for (const json& e : body["edges"]) {
    for (const char* side : {"start", "end"}) {
      const json& n = e[side];
      const std::string id = n["@id"];
      const bool is_query = id == node || id.rfind(node + "/", 0) == 0;
      if (is_query || n["language"] != "en") continue;
      std::string label = n["label"];
      std::transform(label.begin(), label.end(), label.begin(), ::tolower);
      if (!Contains(out, label)) out.push_back(label);
    }
  }
  return out;
}

TEST(ConceptNet, HarvestMatchesIndependentScan) {
  FakeConceptNet fake;
  HarvestConfig cfg;
  cfg.endpoint = fake.endpoint();
  cfg.limit = 77;
  const auto got = HarvestConceptNet({"cat", "dog"}, {Relation::kHasA, Relation::kIsA}, cfg);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_TRUE(Contains(got.at("cat"), "whiskers"));
  EXPECT_EQ(got.at("dog"), ScanFixture(ReadJsonFile(kFixtures / "dog__IsA.json"), "/c/en/dog"));
  EXPECT_TRUE(Contains(got.at("dog"), "puppy"));
  EXPECT_FALSE(Contains(got.at("dog"), "dog"));
  EXPECT_FALSE(Contains(got.at("dog"), "perro"));
  EXPECT_EQ(fake.requests(), 4);
  EXPECT_EQ(fake.last_limit(), "77");
}

TEST(ConceptNet, CacheAnswersRepeatsAndOffline) {
  TempDir dir;
  std::vector<std::string> first;
  {
    FakeConceptNet fake;
    HarvestConfig cfg;
    cfg.endpoint = fake.endpoint();
    cfg.cache_dir = dir / "cache";
    first = HarvestConceptNet({"cat"}, {Relation::kHasA}, cfg).at("cat");
    EXPECT_TRUE(std::filesystem::exists(CachePath(cfg.cache_dir, "cat", Relation::kHasA)));
    HarvestConceptNet({"cat"}, {Relation::kHasA}, cfg);
    EXPECT_EQ(fake.requests(), 1);
  }
  HarvestConfig offline;
  offline.endpoint = "http://127.0.0.1:1";
  offline.cache_dir = dir / "cache";
  offline.offline = true;
  EXPECT_EQ(HarvestConceptNet({"cat"}, {Relation::kHasA}, offline).at("cat"), first);
  try {
    HarvestConceptNet({"dog"}, {Relation::kHasA}, offline);
    FAIL();
  } catch (const RetrievalError& e) {
    EXPECT_EQ(e.status(), 0);
  }
}

TEST(ConceptNet, NonOkStatusIsRetrievalError) {
  FakeConceptNet fake;
  HarvestConfig cfg;
  cfg.endpoint = fake.endpoint();
  try {
    HarvestConceptNet({"broken"}, {Relation::kHasA}, cfg);
    FAIL();
  } catch (const RetrievalError& e) {
    EXPECT_EQ(e.status(), 503);
  }
}

TEST(ConceptNet, UnreachableEndpointIsRetrievalError) {
  HarvestConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";
  cfg.timeout_seconds = 2;
  try {
    HarvestConceptNet({"cat"}, {Relation::kHasA}, cfg);
    FAIL();
  } catch (const RetrievalError& e) {
    EXPECT_EQ(e.status(), 0);
  }
}

TEST(ConceptNet, EmptyInputsAndEmptyResponses) {
  HarvestConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";
  EXPECT_TRUE(HarvestConceptNet({}, AllRelations(), cfg).empty());
  FakeConceptNet fake;
  cfg.endpoint = fake.endpoint();
  const auto got = HarvestConceptNet({"zebra"}, {Relation::kMadeOf}, cfg);
  EXPECT_TRUE(got.at("zebra").empty());
}

}  // namespace
}  // namespace pcbm
