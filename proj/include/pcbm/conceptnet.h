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

// Concept-name harvesting from the ConceptNet REST API. Returns names only;
// text vectors for them come from an external encoder.

#ifndef PCBM_CONCEPTNET_H_
#define PCBM_CONCEPTNET_H_

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace pcbm {

enum class Relation { kHasA, kIsA, kPartOf, kHasProperty, kMadeOf };

// API spelling: "HasA", "IsA", ...
std::string RelationName(Relation r);
// Case-insensitive; accepts "hasA", "HasA", "has_a".
Relation ParseRelation(const std::string& name);
const std::vector<Relation>& AllRelations();

struct HarvestConfig {
  std::string endpoint = "https://api.conceptnet.io";
  // Empty: $PCBM_CACHE_DIR, else no cache.
  std::filesystem::path cache_dir;
  bool offline = false;  // answer from cache only
  int limit = 1000;
  int timeout_seconds = 20;
};

// "/c/en/ice_cream" for "Ice Cream".
std::string ConceptNetNode(const std::string& class_name);

// Names on the far end of every English edge in a /query response,
// lowercased, in first-seen order, without duplicates or the class itself.
std::vector<std::string> ParseQueryResponse(const nlohmann::json& body,
                                            const std::string& class_name);

// Cache file for one (class, relation) pair.
std::filesystem::path CachePath(const std::filesystem::path& cache_dir,
                                const std::string& class_name, Relation r);

// Union over `relations` per class, deduplicated. Network failures without a
// cached response and non-200 responses raise RetrievalError.
std::map<std::string, std::vector<std::string>> HarvestConceptNet(
    const std::vector<std::string>& class_names, const std::vector<Relation>& relations,
    const HarvestConfig& cfg);

}  // namespace pcbm

#endif  // PCBM_CONCEPTNET_H_
