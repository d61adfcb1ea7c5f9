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

#include "pcbm/conceptnet.h"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <regex>
#include <set>

#include "httplib.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string Lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string Trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
}

bool IsNodeOrSense(const std::string& id, const std::string& node) {
  return id == node || id.rfind(node + "/", 0) == 0;
}

// The display name of an edge endpoint, or "" if it is not English.
std::string EnglishName(const json& end) {
  if (!end.is_object()) return "";
  const std::string id = end.value("@id", "");
  const std::string lang = end.value("language", "");
  if (lang != "en" && !(lang.empty() && id.rfind("/c/en/", 0) == 0)) return "";
  std::string label = end.value("label", "");
  if (label.empty() && id.rfind("/c/en/", 0) == 0) {
    label = id.substr(6);
    label = label.substr(0, label.find('/'));
    std::replace(label.begin(), label.end(), '_', ' ');
  }
  return Trim(Lower(label));
}

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string base_path;
};

Endpoint SplitEndpoint(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    throw ArgumentError("endpoint must be an http(s) URL: '" + url + "'");
  }
  std::string base = m[2].matched ? m[2].str() : "";
  while (!base.empty() && base.back() == '/') base.pop_back();
  return {m[1].str(), base};
}

fs::path ResolveCacheDir(const HarvestConfig& cfg) {
  if (!cfg.cache_dir.empty()) return cfg.cache_dir;
  if (const char* env = std::getenv("PCBM_CACHE_DIR"); env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  return {};
}

json FetchQuery(const Endpoint& ep, const std::string& node, Relation r,
                const HarvestConfig& cfg) {
  httplib::Client client(ep.origin);
  if (!client.is_valid()) {
    throw RetrievalError(0, "cannot open a client for " + ep.origin +
                                " (https needs a build with OpenSSL)");
  }
  client.set_connection_timeout(cfg.timeout_seconds, 0);
  client.set_read_timeout(cfg.timeout_seconds, 0);
  client.set_follow_location(true);
  const std::string path = ep.base_path + "/query?node=" + node + "&rel=/r/" +
                           RelationName(r) + "&limit=" + std::to_string(cfg.limit);
  auto res = client.Get(path);
  if (!res) {
    throw RetrievalError(0, "request to " + ep.origin + path +
                                " failed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw RetrievalError(res->status, "GET " + path + " returned HTTP " +
                                          std::to_string(res->status));
  }
  json body = json::parse(res->body, nullptr, false);
  if (body.is_discarded()) {
    throw RetrievalError(res->status, "GET " + path + " returned malformed JSON");
  }
  return body;
}

}  // namespace

std::string RelationName(Relation r) {
  switch (r) {
    case Relation::kHasA: return "HasA";
    case Relation::kIsA: return "IsA";
    case Relation::kPartOf: return "PartOf";
    case Relation::kHasProperty: return "HasProperty";
    case Relation::kMadeOf: return "MadeOf";
  }
  return "HasA";
}

Relation ParseRelation(const std::string& name) {
  std::string key;
  for (char c : name) {
    if (c != '_' && c != '-') key += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  for (Relation r : AllRelations()) {
    if (Lower(RelationName(r)) == key) return r;
  }
  throw ArgumentError("unknown relation '" + name +
                      "' (expected HasA, IsA, PartOf, HasProperty or MadeOf)");
}

const std::vector<Relation>& AllRelations() {
  static const std::vector<Relation> all = {Relation::kHasA, Relation::kIsA,
                                            Relation::kPartOf, Relation::kHasProperty,
                                            Relation::kMadeOf};
  return all;
}

std::string ConceptNetNode(const std::string& class_name) {
  const std::string trimmed = Trim(Lower(class_name));
  if (trimmed.empty()) throw ArgumentError("empty class name");
  std::string term;
  for (char c : trimmed) {
    if (c == '/') throw ArgumentError("class name may not contain '/': " + class_name);
    if (c == ' ' || c == '\t') {
      if (term.back() != '_') term += '_';
    } else {
      term += c;
    }
  }
  return "/c/en/" + term;
}

std::vector<std::string> ParseQueryResponse(const json& body, const std::string& class_name) {
  const std::string node = ConceptNetNode(class_name);
  const std::string self = Trim(Lower(class_name));
  std::vector<std::string> out;
  std::set<std::string> seen;
  if (!body.is_object() || !body.contains("edges")) return out;
  const json& edges = body["edges"];
  if (!edges.is_array()) return out;
  for (const json& e : edges) {
    if (!e.is_object() || !e.contains("start") || !e.contains("end")) continue;
    const std::string start = e["start"].value("@id", "");
    const std::string end = e["end"].value("@id", "");
    const json* other = nullptr;
    if (IsNodeOrSense(start, node)) {
      other = &e["end"];
    } else if (IsNodeOrSense(end, node)) {
      other = &e["start"];
    } else {
      continue;
    }
    std::string name = EnglishName(*other);
    if (name.empty() || name == self) continue;
    if (seen.insert(name).second) out.push_back(std::move(name));
  }
  return out;
}

fs::path CachePath(const fs::path& cache_dir, const std::string& class_name, Relation r) {
  return cache_dir / (ConceptNetNode(class_name).substr(6) + "__" + RelationName(r) + ".json");
}

std::map<std::string, std::vector<std::string>> HarvestConceptNet(
    const std::vector<std::string>& class_names, const std::vector<Relation>& relations,
    const HarvestConfig& cfg) {
  std::map<std::string, std::vector<std::string>> result;
  if (class_names.empty()) return result;
  if (cfg.limit < 1) throw ArgumentError("limit must be positive");
  const fs::path cache = ResolveCacheDir(cfg);
  if (cfg.offline && cache.empty()) {
    throw RetrievalError(0, "offline mode needs a cache directory (PCBM_CACHE_DIR)");
  }
  const Endpoint ep = SplitEndpoint(cfg.endpoint);
  for (const std::string& cls : class_names) {
    auto& names = result[cls];
    std::set<std::string> seen(names.begin(), names.end());
    for (Relation r : relations) {
      json body;
      const fs::path file = cache.empty() ? fs::path() : CachePath(cache, cls, r);
      if (!file.empty() && fs::exists(file)) {
        try {
          body = ReadJsonFile(file);
        } catch (const Error&) {
          body = json();
        }
      }
      if (body.is_null()) {
        if (cfg.offline) {
          throw RetrievalError(0, "offline and no cached response for ('" + cls + "', " +
                                      RelationName(r) + ")");
        }
        body = FetchQuery(ep, ConceptNetNode(cls), r, cfg);
        if (!file.empty()) {
          fs::create_directories(cache);
          WriteJsonFile(file, body);
        }
      }
      for (std::string& n : ParseQueryResponse(body, cls)) {
        if (seen.insert(n).second) names.push_back(std::move(n));
      }
    }
  }
  return result;
}

}  // namespace pcbm
