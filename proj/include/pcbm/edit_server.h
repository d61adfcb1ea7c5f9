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

// HTTP service for human-guided editing sessions over prepared study
// scenarios. Accuracies stay server-side until a session completes.

#ifndef PCBM_EDIT_SERVER_H_
#define PCBM_EDIT_SERVER_H_

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcbm/pipeline.h"

namespace httplib {
class Server;
}

namespace pcbm {

// A study directory holds manifest.json ({"scenarios": [subdir, ...]}) and
// one trained scenario per listed subdirectory, in presentation order.
struct StudyScenario {
  std::string name;
  TrainedScenario trained;
  std::vector<std::size_t> shown;  // top positive concepts of the shifted class
};

std::vector<std::string> ReadStudyManifest(const std::filesystem::path& study_dir);
void WriteStudyManifest(const std::filesystem::path& study_dir,
                        const std::vector<std::string>& scenario_dirs);

// Generates and trains `count` shift scenarios (scenario i uses seed + i)
// into study_dir/scenario_NN and writes the manifest. `progress` is called
// with each scenario name before it is trained.
std::vector<TrainedScenario> PrepareStudy(
    const std::filesystem::path& study_dir, int count, std::uint64_t seed, int threads = 1,
    const std::function<void(const std::string&)>& progress = {});

struct ServerConfig {
  std::filesystem::path study_dir;
  std::filesystem::path state_dir;  // event logs; empty = study_dir/sessions
  bool show_weights = false;
  std::uint64_t seed = 0;  // seeds the random-prune draws
  int random_draws = 20;
  std::size_t pool_size = 10;
};

struct ScenarioRecord {
  std::vector<std::string> selected;
  std::int64_t elapsed_ms = 0;
  double unedited = 0.0;
  double edited = 0.0;
  double hybrid_unedited = 0.0;
  double hybrid_edited = 0.0;
  bool fell_back = false;
  bool operator==(const ScenarioRecord& other) const = default;
};

struct SessionState {
  std::string session_id;
  std::vector<std::string> scenario_order;
  std::vector<ScenarioRecord> records;  // one per submitted task
  bool completed = false;

  std::size_t current_index() const { return records.size(); }
  bool operator==(const SessionState& other) const = default;
};

class EditServer {
 public:
  // Loads every scenario listed in the study manifest (a missing or corrupt
  // artifact throws) and replays any session logs found in the state dir.
  explicit EditServer(ServerConfig cfg);
  ~EditServer();

  const ServerConfig& config() const { return cfg_; }
  const std::vector<StudyScenario>& scenarios() const { return scenarios_; }

  // Transport-independent handlers; they throw pcbm::Error subclasses.
  nlohmann::json CreateSession();
  nlohmann::json GetTask(const std::string& session_id);
  nlohmann::json SubmitPruning(const std::string& session_id, const nlohmann::json& body);
  nlohmann::json GetSummary(const std::string& session_id);
  nlohmann::json Health() const;

  SessionState Snapshot(const std::string& session_id);
  std::filesystem::path LogPath(const std::string& session_id) const;

  // Registers the HTTP routes on `server`.
  void Mount(httplib::Server& server);

 private:
  struct Session {
    SessionState state;
    nlohmann::json summary;  // cached once computed
    std::mutex mu;
  };

  std::shared_ptr<Session> Find(const std::string& session_id);
  const StudyScenario& ScenarioNamed(const std::string& name) const;
  void AppendEvent(const std::string& session_id, const nlohmann::json& event);

  ServerConfig cfg_;
  std::vector<StudyScenario> scenarios_;
  std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
};

// Rebuilds a session from its JSON-lines event log.
SessionState ReplaySessionLog(const std::filesystem::path& log_path);

// HTTP status for an error code ("not_found" → 404, ...).
int HttpStatusFor(const std::string& error_code);

// Blocks serving on host:port until the process is stopped.
void RunEditServer(EditServer& server, const std::string& host, int port);

}  // namespace pcbm

#endif  // PCBM_EDIT_SERVER_H_
