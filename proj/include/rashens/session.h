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


#ifndef RASHENS_SESSION_H_
#define RASHENS_SESSION_H_

#include <filesystem>
#include <mutex>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rashens/common.h"
#include "rashens/pipeline.h"

namespace httplib {
class Server;
}

namespace rashens {

// Error carrying the HTTP status it maps to.
class ApiError : public Error {
 public:
  ApiError(int status, std::string stage, const std::string& message)
      : Error(std::move(stage), message), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct VetoTargets {
  std::vector<int> models;
  std::vector<int> clusters;
  std::vector<std::string> features;
};

// Expert veto session over a completed run. The run directory is never
// written; the veto log and current state live in the sibling directory
// "<run>.session". Readers take a shared lock, mutations an exclusive one.
class Session {
 public:
  // Replays an existing session log unless `fresh` is set.
  Session(const std::filesystem::path& run_dir, bool fresh = false);

  nlohmann::json State() const;
  nlohmann::json Clusters() const;
  nlohmann::json Model(int id) const;
  nlohmann::json EnsembleView() const;
  nlohmann::json Drift() const;

  // Records a veto. The ensemble stays as it is until Rebuild and the state
  // is marked stale. Throws ApiError(409) if the vetoes would leave no
  // constituent.
  nlohmann::json Veto(const VetoTargets& targets, const std::string& reason);
  // Applies all recorded vetoes: removes vetoed constituents and re-runs the
  // constituent search for clusters that lost theirs to a feature veto.
  nlohmann::json Rebuild();

  const std::filesystem::path& session_dir() const { return session_dir_; }
  std::size_t constituent_count() const;

 private:
  struct VetoRecord {
    VetoTargets targets;
    std::string reason;
    std::string time;
  };

  std::vector<Constituent> ComputeConstituents(const std::vector<VetoRecord>& vetoes) const;
  void ApplyVeto(VetoRecord record, bool log);
  void ApplyRebuild(bool log);
  void RefreshMetricsLocked();
  void AppendLog(const nlohmann::json& entry) const;
  void WriteStateLocked() const;
  nlohmann::json StateLocked() const;
  const CandidateModel* FindModel(int id) const;

  std::filesystem::path run_dir_;
  std::filesystem::path session_dir_;
  LoadedRun run_;
  std::vector<std::pair<double, double>> coords_;
  std::vector<double> silhouettes_;

  mutable std::shared_mutex mutex_;
  std::vector<VetoRecord> vetoes_;
  std::vector<Constituent> constituents_;
  Ensemble ensemble_;
  nlohmann::json metrics_;
  std::vector<Constituent> pending_;  // result of the next rebuild
  bool stale_ = false;
  int rebuilds_ = 0;
};

VetoTargets VetoTargetsFromJson(const nlohmann::json& j);

// Registers the /api routes on `server`. When `static_dir` is non-empty it is
// mounted at "/".
void RegisterRoutes(httplib::Server& server, Session& session,
                    const std::filesystem::path& static_dir = {});

// Blocks serving `run_dir`. Returns a process exit code.
int Serve(const std::filesystem::path& run_dir, const std::string& host, int port, bool fresh,
          const std::filesystem::path& static_dir = {});

}  // namespace rashens

#endif  // RASHENS_SESSION_H_
