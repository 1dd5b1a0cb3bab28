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

#ifndef RASHENS_PIPELINE_H_
#define RASHENS_PIPELINE_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rashens/cluster.h"
#include "rashens/data.h"
#include "rashens/ensemble.h"
#include "rashens/explain.h"
#include "rashens/rashomon.h"
#include "rashens/search.h"
#include "rashens/tree.h"

namespace rashens {

// Stream indices for DeriveSeed(config.seed, ...).
enum SeedStream : uint64_t {
  kSamplingSeed = 1,
  kBackgroundSeed = 2,
  kClusterSeed = 3,
  kStackingSeed = 4,
  kDriftSeed = 5,
  kShuffleSeed = 6,
  kAblationSeed = 7,
};

struct RunConfig {
  // Data. A relative dataset path is resolved against `base_dir`.
  std::string dataset;
  std::string target;
  TaskKind task = TaskKind::kBinaryClassification;
  std::vector<std::string> categorical;
  double train_fraction = 0.8;
  // Share of the training split held out for validation.
  double val_fraction = 0.25;
  uint64_t split_seed = 0;
  bool standardize = true;

  // Seed for every model-side stage (sampling, background, clustering,
  // stacking, drift); per-stage seeds are derived from it.
  uint64_t seed = 0;

  int key_size = 1;
  int max_size = 1;
  double alpha = 0.95;
  int n_models = 1000;
  SizeMode size_mode = SizeMode::kUniform;
  TreeParams tree;

  ReferenceSpec reference;
  double epsilon = 0.0;

  int k_min = 0;  // 0 selects the default range
  int k_max = 0;
  int restarts = 5;
  std::size_t silhouette_sample = 4000;

  SearchBudget search;
  bool ensemble_loss = false;
  std::vector<std::string> barred_features;

  CombinerKind combiner = CombinerKind::kVoting;
  double vote_threshold = 0.5;
  int risk_bins = 5;

  std::vector<double> drift_levels = {0.0, 0.4, 0.8, 1.2, 1.6, 2.0};
  std::vector<double> shuffle_levels = {0.1, 0.3, 0.5, 0.7, 0.9};
  int drift_repeats = 30;

  std::size_t background_cap = kDefaultBackgroundCap;
  bool audit_explanations = true;

  // Candidate count and repeats for `ablate`; 0 keeps n_models.
  int ablation_n_models = 0;
  int ablation_repeats = 30;

  std::filesystem::path output_dir;
  std::filesystem::path base_dir;

  void Validate() const;
  std::filesystem::path DatasetPath() const;
};

// `overrides` maps dotted config keys (e.g. "sampling.n_models") to JSON
// text; a value that does not parse as JSON is taken as a string.
RunConfig RunConfigFromJson(nlohmann::json j, const std::filesystem::path& base_dir = {});
RunConfig LoadRunConfig(const std::filesystem::path& path,
                        const std::map<std::string, std::string>& overrides = {});
void ApplyOverride(nlohmann::json& config, const std::string& key, const std::string& value);
// Echo without output_dir/base_dir, so the same config run into two
// directories serializes identically.
nlohmann::json ToJson(const RunConfig& config);

struct PreparedData {
  Dataset all;
  Dataset train;       // inner training split
  Dataset validation;  // inner validation split
  Dataset train_full;  // outer training split (train + validation rows)
  Dataset test;
  Dataset background;
  ScalerParams scaler;
};

PreparedData PrepareData(const RunConfig& config);

struct Constituent {
  CandidateModel model;
  int cluster = 0;
  int clusteroid_id = 0;
  double search_score = 0.0;
  double clusteroid_score = 0.0;
  int expansions = 0;
};

struct RunResult {
  nlohmann::json manifest;
  RashomonSet rset;
  ClusterModel clusters;
  std::vector<Constituent> constituents;
  Ensemble ensemble;
  Tree reference_tree;  // all features, outer training split
  ExplanationVector reference_explanation;
};

// Runs sampling, filtering, clustering, constituent search, ensembling and
// the risk/drift reports. Writes every stage under config.output_dir when it
// is set.
RunResult RunPipeline(const RunConfig& config);

// Members of `rset` as cluster points, in member order.
Points ExplanationPoints(const RashomonSet& rset);

// Metrics block used in the manifest and the server.
nlohmann::json EnsembleMetrics(const Ensemble& ensemble, const PreparedData& data);

// Runs one constituent search per cluster. `barred` features are never
// added; clusters whose clusteroid uses a barred feature restart from their
// nearest-to-centroid member without one, and are skipped when none exists.
std::vector<Constituent> SearchAllClusters(const RunConfig& config, const PreparedData& data,
                                           const RashomonSet& rset, const ClusterModel& clusters,
                                           const std::vector<int>& clusters_to_search,
                                           const std::vector<int>& barred,
                                           ExplanationAudit* audit,
                                           const std::filesystem::path& trace_dir = {});

Ensemble AssembleEnsemble(const RunConfig& config, const PreparedData& data,
                          const std::vector<Constituent>& constituents);

// Loads a completed run directory.
struct LoadedRun {
  RunConfig config;
  nlohmann::json manifest;
  PreparedData data;
  RashomonSet rset;
  ClusterModel clusters;
  std::vector<Constituent> constituents;
  Ensemble ensemble;
};
LoadedRun LoadRun(const std::filesystem::path& dir);

enum class AblationScenario { kI, kII, kIII };
AblationScenario ParseAblationScenario(const std::string& name);
std::string AblationScenarioName(AblationScenario scenario);

struct AblationReport {
  AblationScenario scenario = AblationScenario::kI;
  std::vector<SimilarityReport> points;
  double jaccard_mean = 0.0, jaccard_std = 0.0;
  double cosine_mean = 0.0, cosine_std = 0.0;
};

// Similarity of `repeats` alternative ensembles to the reference run's
// ensemble on the test split. I: full pipeline re-run; II:
// reference clusters, one uniformly drawn member per cluster; III: k members
// drawn uniformly from the whole Rashomon set. Scenario I uses seeds seed,
// seed+1, ... so a single repeat reproduces the reference run.
AblationReport RunAblation(const LoadedRun& reference, AblationScenario scenario, int repeats);

// Similarity between two ensembles on `dataset`.
SimilarityReport CompareEnsembles(const Ensemble& a, const Ensemble& b, const Dataset& dataset);

nlohmann::json ToJson(const AblationReport& report);

}  // namespace rashens

#endif  // RASHENS_PIPELINE_H_
