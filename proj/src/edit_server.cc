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

#include "pcbm/edit_server.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "httplib.h"
#include "pcbm/emb1.h"
#include "pcbm/errors.h"
#include "pcbm/random.h"

namespace pcbm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kManifestSchema[] = "pcbm.study/1";

std::string NewSessionId() {
  static std::mutex mu;
  static std::random_device rd;
  std::lock_guard<std::mutex> lock(mu);
  std::ostringstream os;
  for (int i = 0; i < 4; ++i) {
    os << std::hex;
    os.width(8);
    os.fill('0');
    os << rd();
  }
  return os.str();
}

bool ValidSessionId(const std::string& id) {
  if (id.empty() || id.size() > 64) return false;
  for (char c : id) {
    if (!std::isxdigit(static_cast<unsigned char>(c))) return false;
  }
  return true;
}

json ToJson(const ScenarioRecord& r) {
  return {{"selected", r.selected},
          {"elapsed_ms", r.elapsed_ms},
          {"unedited", r.unedited},
          {"edited", r.edited},
          {"hybrid_unedited", r.hybrid_unedited},
          {"hybrid_edited", r.hybrid_edited},
          {"fell_back", r.fell_back}};
}

ScenarioRecord RecordFromJson(const json& j) {
  ScenarioRecord r;
  r.selected = j.at("selected").get<std::vector<std::string>>();
  r.elapsed_ms = j.at("elapsed_ms").get<std::int64_t>();
  r.unedited = j.at("unedited").get<double>();
  r.edited = j.at("edited").get<double>();
  r.hybrid_unedited = j.at("hybrid_unedited").get<double>();
  r.hybrid_edited = j.at("hybrid_edited").get<double>();
  r.fell_back = j.at("fell_back").get<bool>();
  return r;
}

json MeanStderrJson(const std::vector<double>& v) {
  const MeanStderr m = Summarize(v);
  return {{"mean", m.mean}, {"stderr", m.stderr_}, {"n", v.size()}};
}

json ErrorBody(const std::string& code, const std::string& message) {
  return {{"code", code}, {"message", message}};
}

}  // namespace

std::vector<std::string> ReadStudyManifest(const fs::path& study_dir) {
  const json j = ReadJsonFile(study_dir / "manifest.json");
  if (j.value("schema_version", "") != kManifestSchema) {
    throw FormatError("unsupported study manifest in " + study_dir.string());
  }
  std::vector<std::string> dirs;
  try {
    dirs = j.at("scenarios").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad study manifest: ") + e.what());
  }
  if (dirs.empty()) throw FormatError("study manifest lists no scenarios");
  if (std::set<std::string>(dirs.begin(), dirs.end()).size() != dirs.size()) {
    throw FormatError("study manifest lists a scenario twice");
  }
  return dirs;
}

void WriteStudyManifest(const fs::path& study_dir, const std::vector<std::string>& dirs) {
  if (dirs.empty()) throw ArgumentError("a study needs at least one scenario");
  if (std::set<std::string>(dirs.begin(), dirs.end()).size() != dirs.size()) {
    throw ArgumentError("scenario listed twice");
  }
  fs::create_directories(study_dir);
  WriteJsonFile(study_dir / "manifest.json",
                {{"schema_version", kManifestSchema}, {"scenarios", dirs}});
}

int HttpStatusFor(const std::string& code) {
  if (code == "not_found") return 404;
  if (code == "conflict") return 409;
  if (code == "validation_error") return 422;
  if (code == "argument_error" || code == "format_error") return 400;
  return 500;
}

// ---------------------------------------------------------------- server

std::vector<TrainedScenario> PrepareStudy(const fs::path& study_dir, int count,
                                          std::uint64_t seed, int threads,
                                          const std::function<void(const std::string&)>& progress) {
  if (count < 1) throw ArgumentError("a study needs at least one scenario");
  std::vector<TrainedScenario> out;
  std::vector<std::string> dirs;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    const ShiftSetup setup = DefaultShiftSetup(s);
    const ShiftScenario sc =
        GenerateShiftScenario(setup.spec, setup.shifted_class, setup.spurious_concept);
    PipelineConfig cfg;
    cfg.seed = cfg.svm.seed = cfg.pcbm.seed = cfg.residual.seed = s;
    cfg.threads = threads;
    char name[32];
    std::snprintf(name, sizeof(name), "scenario_%02d", i);
    if (progress) progress(name);
    out.push_back(TrainScenario(sc, cfg, name));
    SaveTrainedScenario(out.back(), study_dir / name);
    dirs.push_back(name);
  }
  WriteStudyManifest(study_dir, dirs);
  return out;
}

EditServer::EditServer(ServerConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.random_draws < 1) throw ArgumentError("random_draws must be positive");
  if (cfg_.pool_size < 1) throw ArgumentError("pool_size must be positive");
  for (const std::string& dir : ReadStudyManifest(cfg_.study_dir)) {
    StudyScenario s;
    s.name = dir;
    s.trained = LoadTrainedScenario(cfg_.study_dir / dir);
    s.shown = TopPositivePool(s.trained.pcbm, s.trained.shifted_class, cfg_.pool_size);
    scenarios_.push_back(std::move(s));
  }
  if (cfg_.state_dir.empty()) cfg_.state_dir = cfg_.study_dir / "sessions";
  fs::create_directories(cfg_.state_dir);

  std::vector<std::string> names;
  for (const auto& s : scenarios_) names.push_back(s.name);
  for (const auto& entry : fs::directory_iterator(cfg_.state_dir)) {
    if (entry.path().extension() != ".jsonl") continue;
    SessionState state = ReplaySessionLog(entry.path());
    if (state.scenario_order != names) {
      throw FormatError("session log " + entry.path().string() +
                        " was recorded against a different study");
    }
    auto session = std::make_shared<Session>();
    session->state = std::move(state);
    sessions_[session->state.session_id] = session;
  }
}

EditServer::~EditServer() = default;

fs::path EditServer::LogPath(const std::string& id) const {
  return cfg_.state_dir / (id + ".jsonl");
}

void EditServer::AppendEvent(const std::string& id, const json& event) {
  std::ofstream out(LogPath(id), std::ios::app | std::ios::binary);
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw Error("io_error", "cannot append to " + LogPath(id).string());
}

std::shared_ptr<EditServer::Session> EditServer::Find(const std::string& id) {
  std::lock_guard<std::mutex> lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("no session '" + id + "'");
  return it->second;
}

const StudyScenario& EditServer::ScenarioNamed(const std::string& name) const {
  for (const auto& s : scenarios_) {
    if (s.name == name) return s;
  }
  throw NotFoundError("no scenario '" + name + "'");
}

json EditServer::Health() const {
  return {{"status", "ok"}, {"scenario_count", scenarios_.size()}};
}

json EditServer::CreateSession() {
  auto session = std::make_shared<Session>();
  std::string id;
  {
    std::lock_guard<std::mutex> lock(sessions_mu_);
    do {
      id = NewSessionId();
    } while (sessions_.count(id) != 0);
    session->state.session_id = id;
    for (const auto& s : scenarios_) session->state.scenario_order.push_back(s.name);
    sessions_[id] = session;
  }
  std::lock_guard<std::mutex> lock(session->mu);
  AppendEvent(id, {{"event", "created"},
                   {"session_id", id},
                   {"scenario_order", session->state.scenario_order},
                   {"timestamp", UtcTimestamp()}});
  return {{"session_id", id},
          {"scenario_count", session->state.scenario_order.size()},
          {"completed", false}};
}

json EditServer::GetTask(const std::string& id) {
  auto session = Find(id);
  std::lock_guard<std::mutex> lock(session->mu);
  const SessionState& st = session->state;
  if (st.completed) throw ConflictError("session '" + id + "' is completed");
  const std::size_t index = st.current_index();
  const StudyScenario& sc = ScenarioNamed(st.scenario_order[index]);
  const PCBMModel& m = sc.trained.pcbm;
  json concepts = json::array();
  for (std::size_t c : sc.shown) {
    json item = {{"name", m.concept_names[c]}};
    if (cfg_.show_weights) {
      item["weight"] = m.weights(static_cast<std::size_t>(sc.trained.shifted_class), c);
    }
    concepts.push_back(std::move(item));
  }
  return {{"session_id", id},
          {"index", index},
          {"scenario_count", st.scenario_order.size()},
          {"scenario", sc.name},
          {"class_names", m.class_names},
          {"shifted_class", m.class_names[sc.trained.shifted_class]},
          {"shifted_class_id", sc.trained.shifted_class},
          {"concepts", concepts},
          {"pool_size", cfg_.pool_size},
          {"short", sc.shown.size() < cfg_.pool_size}};
}

json EditServer::SubmitPruning(const std::string& id, const json& body) {
  auto session = Find(id);
  std::lock_guard<std::mutex> lock(session->mu);
  SessionState& st = session->state;
  if (st.completed) throw ConflictError("session '" + id + "' is completed");
  const std::size_t index = st.current_index();
  if (!body.is_object()) throw FormatError("request body must be a JSON object");
  if (body.contains("index")) {
    if (!body["index"].is_number_integer()) throw FormatError("'index' must be an integer");
    const auto claimed = body["index"].get<std::int64_t>();
    if (claimed != static_cast<std::int64_t>(index)) {
      throw ConflictError("task " + std::to_string(claimed) +
                          " is not the current task (" + std::to_string(index) + ")");
    }
  }
  std::vector<std::string> names;
  if (body.contains("concepts")) {
    const json& c = body["concepts"];
    if (!c.is_array()) throw FormatError("'concepts' must be an array of names");
    for (const json& n : c) {
      if (!n.is_string()) throw FormatError("'concepts' must be an array of names");
      names.push_back(n.get<std::string>());
    }
  }
  std::int64_t elapsed = 0;
  if (body.contains("elapsed_ms")) {
    if (!body["elapsed_ms"].is_number_integer() || body["elapsed_ms"].get<std::int64_t>() < 0) {
      throw ValidationError("'elapsed_ms' must be a non-negative integer");
    }
    elapsed = body["elapsed_ms"].get<std::int64_t>();
  }

  const StudyScenario& sc = ScenarioNamed(st.scenario_order[index]);
  const TrainedScenario& t = sc.trained;
  std::vector<std::size_t> selected;
  std::set<std::string> seen;
  for (const std::string& n : names) {
    if (!seen.insert(n).second) throw ValidationError("concept '" + n + "' selected twice");
    auto it = std::find_if(sc.shown.begin(), sc.shown.end(),
                           [&](std::size_t c) { return t.pcbm.concept_names[c] == n; });
    if (it == sc.shown.end()) {
      throw ValidationError("concept '" + n + "' is not among the shown concepts");
    }
    selected.push_back(*it);
  }

  ScenarioRecord rec;
  rec.selected = names;
  rec.elapsed_ms = elapsed;
  rec.unedited = HeldoutClassAccuracy(t, t.pcbm);
  rec.hybrid_unedited = HeldoutHybridClassAccuracy(t, t.hybrid);
  if (selected.empty()) {
    rec.edited = rec.unedited;
    rec.hybrid_edited = rec.hybrid_unedited;
  } else {
    const NormalizedPrune p = PruneNormalizeOrFallback(t.pcbm, t.shifted_class, selected);
    const NormalizedPrune hp =
        PruneNormalizeOrFallback(t.hybrid.pcbm, t.shifted_class, selected);
    rec.edited = HeldoutClassAccuracy(t, p.model);
    rec.hybrid_edited = HeldoutHybridClassAccuracy(t, WithConceptHead(t.hybrid, hp.model));
    rec.fell_back = p.fell_back;
  }

  AppendEvent(id, {{"event", "pruned"},
                   {"index", index},
                   {"scenario", sc.name},
                   {"record", ToJson(rec)},
                   {"timestamp", UtcTimestamp()}});
  st.records.push_back(std::move(rec));
  st.completed = st.records.size() == st.scenario_order.size();

  json next = st.completed ? json(nullptr) : json(st.current_index());
  return {{"session_id", id},
          {"accepted_index", index},
          {"next_index", next},
          {"remaining", st.scenario_order.size() - st.records.size()},
          {"completed", st.completed}};
}

json EditServer::GetSummary(const std::string& id) {
  auto session = Find(id);
  std::lock_guard<std::mutex> lock(session->mu);
  const SessionState& st = session->state;
  if (!st.completed) {
    throw ConflictError("session '" + id + "' has " +
                        std::to_string(st.scenario_order.size() - st.records.size()) +
                        " unfinished tasks");
  }
  if (!session->summary.is_null()) return session->summary;

  json rows = json::array();
  std::vector<double> user_gain, random_gain, greedy_gain, ft_gain, hybrid_gain;
  std::vector<double> unedited, user, random, greedy, ft;
  for (std::size_t i = 0; i < st.records.size(); ++i) {
    const ScenarioRecord& rec = st.records[i];
    const StudyScenario& sc = ScenarioNamed(st.scenario_order[i]);
    const TrainedScenario& t = sc.trained;
    std::vector<std::size_t> idx;
    for (const std::string& n : rec.selected) idx.push_back(*t.bank.IndexOf(n));
    const Baselines b =
        ComputeBaselines(t, idx, DeriveSeed(cfg_.seed, "study/" + sc.name), cfg_.random_draws);
    json shown = json::array();
    for (std::size_t c : sc.shown) shown.push_back(t.pcbm.concept_names[c]);
    rows.push_back({{"scenario", sc.name},
                    {"shifted_class", t.class_names[t.shifted_class]},
                    {"shown", shown},
                    {"selected", rec.selected},
                    {"count", rec.selected.size()},
                    {"elapsed_ms", rec.elapsed_ms},
                    {"unedited_accuracy", rec.unedited},
                    {"user_accuracy", rec.edited},
                    {"random_accuracy", b.random},
                    {"greedy_accuracy", b.greedy},
                    {"fine_tune_accuracy", b.fine_tune},
                    {"hybrid_unedited_accuracy", rec.hybrid_unedited},
                    {"hybrid_user_accuracy", rec.hybrid_edited},
                    {"user_gain", rec.edited - rec.unedited},
                    {"random_gain", b.random - rec.unedited},
                    {"greedy_gain", b.greedy - rec.unedited},
                    {"fine_tune_gain", b.fine_tune - rec.unedited},
                    {"hybrid_user_gain", rec.hybrid_edited - rec.hybrid_unedited},
                    {"random_count", b.count},
                    {"greedy_count", b.greedy_selection.size()},
                    {"greedy_selection", b.greedy_selection},
                    {"normalization_fell_back", rec.fell_back}});
    unedited.push_back(rec.unedited);
    user.push_back(rec.edited);
    random.push_back(b.random);
    greedy.push_back(b.greedy);
    ft.push_back(b.fine_tune);
    user_gain.push_back(rec.edited - rec.unedited);
    random_gain.push_back(b.random - rec.unedited);
    greedy_gain.push_back(b.greedy - rec.unedited);
    ft_gain.push_back(b.fine_tune - rec.unedited);
    hybrid_gain.push_back(rec.hybrid_edited - rec.hybrid_unedited);
  }
  session->summary = {
      {"session_id", id},
      {"completed", true},
      {"metric", "shifted_class_accuracy"},
      {"random_draws", cfg_.random_draws},
      {"baseline_seed", cfg_.seed},
      {"scenarios", rows},
      {"aggregate",
       {{"unedited_accuracy", MeanStderrJson(unedited)},
        {"user_accuracy", MeanStderrJson(user)},
        {"random_accuracy", MeanStderrJson(random)},
        {"greedy_accuracy", MeanStderrJson(greedy)},
        {"fine_tune_accuracy", MeanStderrJson(ft)},
        {"user_gain", MeanStderrJson(user_gain)},
        {"random_gain", MeanStderrJson(random_gain)},
        {"greedy_gain", MeanStderrJson(greedy_gain)},
        {"fine_tune_gain", MeanStderrJson(ft_gain)},
        {"hybrid_user_gain", MeanStderrJson(hybrid_gain)}}}};
  return session->summary;
}

SessionState EditServer::Snapshot(const std::string& id) {
  auto session = Find(id);
  std::lock_guard<std::mutex> lock(session->mu);
  return session->state;
}

// ---------------------------------------------------------------- replay

SessionState ReplaySessionLog(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open session log " + path.string());
  SessionState st;
  std::string line;
  int lineno = 0;
  bool created = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    const json e = json::parse(line, nullptr, false);
    if (e.is_discarded() || !e.is_object()) throw FormatError("malformed event at " + where);
    try {
      const std::string kind = e.at("event").get<std::string>();
      if (kind == "created") {
        if (created) throw FormatError("second 'created' event at " + where);
        created = true;
        st.session_id = e.at("session_id").get<std::string>();
        st.scenario_order = e.at("scenario_order").get<std::vector<std::string>>();
      } else if (kind == "pruned") {
        if (!created) throw FormatError("event before 'created' at " + where);
        if (st.completed) throw FormatError("event after completion at " + where);
        const auto index = e.at("index").get<std::size_t>();
        if (index != st.records.size() ||
            e.at("scenario").get<std::string>() != st.scenario_order.at(index)) {
          throw FormatError("out-of-order submission at " + where);
        }
        st.records.push_back(RecordFromJson(e.at("record")));
        st.completed = st.records.size() == st.scenario_order.size();
      } else {
        throw FormatError("unknown event '" + kind + "' at " + where);
      }
    } catch (const json::exception& ex) {
      throw FormatError("bad event at " + where + ": " + ex.what());
    }
  }
  if (!created) throw FormatError("session log " + path.string() + " has no 'created' event");
  if (!ValidSessionId(st.session_id) || path.stem().string() != st.session_id) {
    throw FormatError("session id does not match log name " + path.string());
  }
  return st;
}

// ------------------------------------------------------------------ HTTP

namespace {

template <typename F>
void Respond(httplib::Response& res, F&& handler) {
  try {
    res.status = 200;
    res.set_content(handler().dump(), "application/json");
  } catch (const Error& e) {
    res.status = HttpStatusFor(e.code());
    res.set_content(ErrorBody(e.code(), e.what()).dump(), "application/json");
  } catch (const std::exception& e) {
    res.status = 500;
    res.set_content(ErrorBody("internal_error", e.what()).dump(), "application/json");
  }
}

json ParseBody(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  json j = json::parse(req.body, nullptr, false);
  if (j.is_discarded()) throw FormatError("request body is not valid JSON");
  return j;
}

}  // namespace

void EditServer::Mount(httplib::Server& server) {
  server.Get("/healthz", [this](const httplib::Request&, httplib::Response& res) {
    Respond(res, [&] { return Health(); });
  });
  server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    Respond(res, [&] {
      ParseBody(req);
      return CreateSession();
    });
  });
  server.Get(R"(/sessions/([^/]+)/task)",
             [this](const httplib::Request& req, httplib::Response& res) {
               Respond(res, [&] { return GetTask(req.matches[1]); });
             });
  server.Post(R"(/sessions/([^/]+)/prune)",
              [this](const httplib::Request& req, httplib::Response& res) {
                Respond(res, [&] { return SubmitPruning(req.matches[1], ParseBody(req)); });
              });
  server.Get(R"(/sessions/([^/]+)/summary)",
             [this](const httplib::Request& req, httplib::Response& res) {
               Respond(res, [&] { return GetSummary(req.matches[1]); });
             });
  server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : "http_error";
    res.set_content(ErrorBody(code, "no route for " + req.method + " " + req.path).dump(),
                    "application/json");
  });
}

void RunEditServer(EditServer& edit, const std::string& host, int port) {
  httplib::Server server;
  edit.Mount(server);
  if (!server.listen(host, port)) {
    throw Error("io_error", "cannot listen on " + host + ":" + std::to_string(port));
  }
}

}  // namespace pcbm
