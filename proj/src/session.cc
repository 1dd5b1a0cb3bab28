/*
 * Copyright 2026 The Rashens Authors.
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

#include "rashens/session.h"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "rashens/metrics.h"

namespace rashens {
namespace {

std::string UtcNow() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << '.' << std::setw(3) << std::setfill('0') << ms << 'Z';
  return out.str();
}

nlohmann::json ToJson(const VetoTargets& t) {
  return {{"models", t.models}, {"clusters", t.clusters}, {"features", t.features}};
}

std::vector<std::string> SubsetNames(const FeatureSubset& s, const FeatureSchema& schema) {
  std::vector<std::string> out;
  for (int f : s.indices()) out.push_back(schema.names()[f]);
  return out;
}

nlohmann::json ReadJsonFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ApiError(404, "drift", "no report at " + path.string() + "; run `rashens drift` first");
  return nlohmann::json::parse(in);
}

}  // namespace

VetoTargets VetoTargetsFromJson(const nlohmann::json& j) {
  VetoTargets t;
  try {
    if (!j.is_object()) throw ApiError(400, "veto", "targets must be an object");
    for (const auto& [key, value] : j.items()) {
      if (key != "models" && key != "clusters" && key != "features") {
        throw ApiError(400, "veto", "unknown target kind '" + key + "'");
      }
    }
    t.models = j.value("models", std::vector<int>{});
    t.clusters = j.value("clusters", std::vector<int>{});
    t.features = j.value("features", std::vector<std::string>{});
  } catch (const nlohmann::json::exception& e) {
    throw ApiError(400, "veto", std::string("malformed targets: ") + e.what());
  }
  return t;
}

Session::Session(const std::filesystem::path& run_dir, bool fresh)
    : run_dir_(std::filesystem::absolute(run_dir).lexically_normal()) {
  if (run_dir_.filename().empty()) run_dir_ = run_dir_.parent_path();
  session_dir_ = run_dir_.parent_path() / (run_dir_.filename().string() + ".session");
  run_ = LoadRun(run_dir_);
  const Points points = ExplanationPoints(run_.rset);
  coords_ = Project2d(points);
  silhouettes_ = run_.clusters.k >= 2 ? SilhouetteSamples(points, run_.clusters.assignment)
                                      : std::vector<double>(points.size(), 0.0);
  constituents_ = run_.constituents;
  ensemble_ = run_.ensemble;
  RefreshMetricsLocked();

  if (fresh) std::filesystem::remove_all(session_dir_);
  std::filesystem::create_directories(session_dir_);
  std::ifstream log(session_dir_ / "log.jsonl");
  std::string line;
  int line_no = 0;
  while (std::getline(log, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto entry = nlohmann::json::parse(line);
      const std::string op = entry.at("op").get<std::string>();
      if (op == "veto") {
        ApplyVeto({VetoTargetsFromJson(entry.at("targets")), entry.value("reason", std::string()),
                   entry.value("time", std::string())},
                  false);
      } else if (op == "rebuild") {
        ApplyRebuild(false);
      } else {
        throw Error("session", "unknown op '" + op + "'");
      }
    } catch (const std::exception& e) {
      throw Error("session", "cannot replay " + (session_dir_ / "log.jsonl").string() + " line " +
                                 std::to_string(line_no) + ": " + e.what() + " (use --fresh to discard)");
    }
  }
  WriteStateLocked();
}

const CandidateModel* Session::FindModel(int id) const {
  for (const auto& c : constituents_) {
    if (c.model.id == id) return &c.model;
  }
  for (const auto& c : pending_) {
    if (c.model.id == id) return &c.model;
  }
  for (const auto& c : run_.constituents) {
    if (c.model.id == id) return &c.model;
  }
  const auto& m = run_.rset.members;
  const auto it = std::lower_bound(m.begin(), m.end(), id,
                                   [](const CandidateModel& a, int v) { return a.id < v; });
  if (it != m.end() && it->id == id) return &*it;
  for (const auto& c : m) {
    if (c.id == id) return &c;
  }
  return nullptr;
}

std::vector<Constituent> Session::ComputeConstituents(const std::vector<VetoRecord>& vetoes) const {
  std::set<int> models, clusters;
  std::set<std::string> features;
  for (const auto& v : vetoes) {
    models.insert(v.targets.models.begin(), v.targets.models.end());
    clusters.insert(v.targets.clusters.begin(), v.targets.clusters.end());
    features.insert(v.targets.features.begin(), v.targets.features.end());
  }
  const FeatureSchema& schema = run_.data.train.schema();
  std::vector<int> barred;
  for (const auto& f : features) barred.push_back(schema.IndexOf(f));
  std::sort(barred.begin(), barred.end());
  const auto uses_barred = [&](const FeatureSubset& s) {
    return std::any_of(barred.begin(), barred.end(), [&](int f) { return s.Contains(f); });
  };

  std::map<int, Constituent> by_cluster;
  std::vector<int> research;
  for (const auto& c : run_.constituents) {
    if (clusters.count(c.cluster) > 0 || models.count(c.model.id) > 0) continue;
    if (uses_barred(c.model.subset)) {
      research.push_back(c.cluster);
      continue;
    }
    by_cluster[c.cluster] = c;
  }
  if (!research.empty()) {
    for (auto& c : SearchAllClusters(run_.config, run_.data, run_.rset, run_.clusters, research, barred, nullptr)) {
      if (models.count(c.model.id) == 0 && !uses_barred(c.model.subset)) by_cluster[c.cluster] = std::move(c);
    }
  }
  std::vector<Constituent> out;
  for (auto& [cluster, c] : by_cluster) out.push_back(std::move(c));
  return out;
}

void Session::ApplyVeto(VetoRecord record, bool log) {
  const auto& t = record.targets;
  if (t.models.empty() && t.clusters.empty() && t.features.empty()) {
    throw ApiError(400, "veto", "no veto targets given");
  }
  for (int id : t.models) {
    if (FindModel(id) == nullptr) throw ApiError(404, "veto", "unknown model id " + std::to_string(id));
  }
  for (int c : t.clusters) {
    if (c < 0 || c >= run_.clusters.k) throw ApiError(404, "veto", "unknown cluster id " + std::to_string(c));
  }
  for (const auto& f : t.features) {
    if (run_.data.train.schema().IndexOf(f) < 0) throw ApiError(404, "veto", "unknown feature '" + f + "'");
  }
  std::vector<VetoRecord> next = vetoes_;
  next.push_back(record);
  std::vector<Constituent> result = ComputeConstituents(next);
  if (result.empty()) {
    throw ApiError(409, "veto",
                   "veto rejected: it would remove every constituent and leave an empty ensemble");
  }
  if (record.time.empty()) record.time = UtcNow();
  if (log) {
    AppendLog({{"op", "veto"}, {"time", record.time}, {"targets", ToJson(record.targets)},
               {"reason", record.reason}});
  }
  vetoes_.push_back(std::move(record));
  pending_ = std::move(result);
  stale_ = true;
}

void Session::ApplyRebuild(bool log) {
  if (!stale_) {
    if (log) AppendLog({{"op", "rebuild"}, {"time", UtcNow()}, {"changed", false}});
    return;
  }
  Ensemble e = AssembleEnsemble(run_.config, run_.data, pending_);
  constituents_ = pending_;
  ensemble_ = std::move(e);
  stale_ = false;
  ++rebuilds_;
  RefreshMetricsLocked();
  if (log) {
    AppendLog({{"op", "rebuild"}, {"time", UtcNow()}, {"changed", true},
               {"constituents", constituents_.size()}});
  }
  std::ofstream(session_dir_ / "ensemble.json") << nlohmann::json(rashens::ToJson(ensemble_)).dump(2) << '\n';
}

void Session::RefreshMetricsLocked() {
  metrics_ = EnsembleMetrics(ensemble_, run_.data);
}

void Session::AppendLog(const nlohmann::json& entry) const {
  std::ofstream out(session_dir_ / "log.jsonl", std::ios::app);
  if (!out) throw ApiError(500, "session", "cannot append to the session log");
  out << entry.dump() << '\n';
}

void Session::WriteStateLocked() const {
  nlohmann::json state = StateLocked();
  state.erase("manifest");
  std::ofstream out(session_dir_ / "state.json");
  out << state.dump(2) << '\n';
}

nlohmann::json Session::StateLocked() const {
  nlohmann::json vetoes = nlohmann::json::array();
  std::set<std::string> barred;
  std::set<int> models, clusters;
  for (const auto& v : vetoes_) {
    vetoes.push_back({{"targets", ToJson(v.targets)}, {"reason", v.reason}, {"time", v.time}});
    barred.insert(v.targets.features.begin(), v.targets.features.end());
    models.insert(v.targets.models.begin(), v.targets.models.end());
    clusters.insert(v.targets.clusters.begin(), v.targets.clusters.end());
  }
  std::vector<int> ids;
  for (const auto& c : constituents_) ids.push_back(c.model.id);
  std::vector<int> pending_ids;
  for (const auto& c : pending_) pending_ids.push_back(c.model.id);
  return {{"manifest", run_.manifest},
          {"session_dir", session_dir_.string()},
          {"vetoes", vetoes},
          {"vetoed_models", models},
          {"vetoed_clusters", clusters},
          {"barred_features", barred},
          {"stale", stale_},
          {"rebuilds", rebuilds_},
          {"constituent_ids", ids},
          {"pending_constituent_ids", stale_ ? nlohmann::json(pending_ids) : nlohmann::json(nullptr)},
          {"metrics", metrics_}};
}

nlohmann::json Session::State() const {
  std::shared_lock lock(mutex_);
  return StateLocked();
}

std::size_t Session::constituent_count() const {
  std::shared_lock lock(mutex_);
  return constituents_.size();
}

nlohmann::json Session::Clusters() const {
  std::shared_lock lock(mutex_);
  const auto& names = run_.data.train.schema().names();
  std::set<int> clusteroids(run_.clusters.clusteroids.begin(), run_.clusters.clusteroids.end());
  nlohmann::json members = nlohmann::json::array();
  for (std::size_t i = 0; i < run_.rset.members.size(); ++i) {
    const auto& m = run_.rset.members[i];
    std::vector<int> order(m.explanation.values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return m.explanation.values[a] > m.explanation.values[b];
    });
    nlohmann::json top = nlohmann::json::array();
    for (std::size_t r = 0; r < std::min<std::size_t>(5, order.size()); ++r) {
      if (m.explanation.values[order[r]] <= 0) break;
      top.push_back({{"feature", names[order[r]]}, {"value", m.explanation.values[order[r]]}});
    }
    members.push_back({{"id", m.id},
                       {"cluster", run_.clusters.assignment[i]},
                       {"x", coords_[i].first},
                       {"y", coords_[i].second},
                       {"silhouette", silhouettes_[i]},
                       {"val_loss", m.val_loss},
                       {"clusteroid", clusteroids.count(static_cast<int>(i)) > 0},
                       {"top_features", top}});
  }
  std::vector<int> clusteroid_ids;
  for (int p : run_.clusters.clusteroids) clusteroid_ids.push_back(run_.rset.members[p].id);
  return {{"k", run_.clusters.k},
          {"silhouette", run_.clusters.silhouette},
          {"sizes", run_.clusters.ClusterSizes()},
          {"clusteroid_ids", clusteroid_ids},
          {"members", members}};
}

nlohmann::json Session::Model(int id) const {
  std::shared_lock lock(mutex_);
  const CandidateModel* m = FindModel(id);
  if (m == nullptr) throw ApiError(404, "models", "unknown model id " + std::to_string(id));
  const auto& schema = run_.data.train.schema();
  nlohmann::json explanation = nlohmann::json::object();
  for (std::size_t j = 0; j < m->explanation.values.size(); ++j) {
    explanation[schema.names()[j]] = m->explanation.values[j];
  }
  const LossReport test = Evaluate(m->tree, run_.data.test);
  nlohmann::json cluster = nullptr;
  for (std::size_t i = 0; i < run_.rset.members.size(); ++i) {
    if (run_.rset.members[i].id == id) cluster = run_.clusters.assignment[i];
  }
  bool constituent = false;
  for (const auto& c : constituents_) {
    if (c.model.id == id) {
      constituent = true;
      cluster = c.cluster;
    }
  }
  bool vetoed = false;
  for (const auto& v : vetoes_) {
    vetoed = vetoed || std::count(v.targets.models.begin(), v.targets.models.end(), id) > 0;
  }
  return {{"id", m->id},
          {"subset", SubsetNames(m->subset, schema)},
          {"subset_indices", m->subset.indices()},
          {"explanation", explanation},
          {"val_loss", m->val_loss},
          {"validation", {{"loss", m->validation.loss}, {"auroc", m->validation.auroc},
                          {"accuracy", m->validation.accuracy}, {"mape", m->validation.mape}}},
          {"test", {{"loss", test.loss}, {"auroc", test.auroc}, {"accuracy", test.accuracy},
                    {"mape", test.mape}}},
          {"cluster", cluster},
          {"constituent", constituent},
          {"vetoed", vetoed},
          {"tree", rashens::ToJson(m->tree)}};
}

nlohmann::json Session::EnsembleView() const {
  std::shared_lock lock(mutex_);
  const auto& schema = run_.data.train.schema();
  nlohmann::json constituents = nlohmann::json::array();
  for (const auto& c : constituents_) {
    constituents.push_back({{"id", c.model.id},
                            {"cluster", c.cluster},
                            {"clusteroid_id", c.clusteroid_id},
                            {"subset", SubsetNames(c.model.subset, schema)},
                            {"val_loss", c.model.val_loss},
                            {"search_score", c.search_score}});
  }
  nlohmann::json out = {{"combiner", ensemble_.combiner == CombinerKind::kVoting ? "voting" : "stacking"},
                        {"constituents", constituents},
                        {"metrics", metrics_},
                        {"stale", stale_},
                        {"test_rows", run_.data.test.rows()}};
  if (ensemble_.task == TaskKind::kBinaryClassification) {
    out["risk"] = rashens::ToJson(RiskStratify(ensemble_, run_.data.test, run_.config.risk_bins));
    // Agreement histogram over the test rows: one bin per possible vote count.
    const std::size_t n = ensemble_.constituents.size();
    std::vector<int> counts(n + 1, 0);
    for (std::size_t i = 0; i < run_.data.test.rows(); ++i) {
      const double r = PredictVoting(ensemble_, run_.data.test.row(i)).agreement.voting_ratio;
      ++counts[static_cast<std::size_t>(std::lround(r * static_cast<double>(n)))];
    }
    nlohmann::json histogram = nlohmann::json::array();
    for (std::size_t v = 0; v <= n; ++v) {
      const double ratio = static_cast<double>(v) / static_cast<double>(n);
      histogram.push_back({{"voting_ratio", ratio},
                           {"agreement", std::max(ratio, 1.0 - ratio)},
                           {"count", counts[v]}});
    }
    out["agreement_histogram"] = histogram;
  }
  return out;
}

nlohmann::json Session::Drift() const {
  nlohmann::json out = nlohmann::json::object();
  for (const char* kind : {"gaussian", "shuffle"}) {
    const auto path = run_dir_ / "drift" / (std::string(kind) + ".json");
    if (std::filesystem::exists(path)) out[kind] = ReadJsonFile(path);
  }
  if (out.empty()) {
    throw ApiError(404, "drift", "the run has no drift report; run `rashens drift --dir " +
                                     run_dir_.string() + "`");
  }
  return out;
}

nlohmann::json Session::Veto(const VetoTargets& targets, const std::string& reason) {
  std::unique_lock lock(mutex_);
  ApplyVeto({targets, reason, ""}, true);
  WriteStateLocked();
  return StateLocked();
}

nlohmann::json Session::Rebuild() {
  std::unique_lock lock(mutex_);
  ApplyRebuild(true);
  WriteStateLocked();
  return StateLocked();
}

}  // namespace rashens
