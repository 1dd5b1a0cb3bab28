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

#include "rashens/pipeline.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>

#include <tbb/parallel_for.h>

#include "rashens/common.h"
#include "rashens/metrics.h"

namespace rashens {
namespace {

constexpr const char* kStage = "pipeline";

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point since) {
  return std::chrono::duration<double>(Clock::now() - since).count();
}

void CheckKeys(const nlohmann::json& j, const std::string& where,
               const std::set<std::string>& allowed) {
  if (!j.is_object()) throw Error("config", "'" + where + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (allowed.count(key) == 0) throw Error("config", "unknown key '" + where + "." + key + "'");
  }
}

nlohmann::json Section(const nlohmann::json& j, const std::string& name,
                       const std::set<std::string>& allowed) {
  if (!j.contains(name)) return nlohmann::json::object();
  CheckKeys(j.at(name), name, allowed);
  return j.at(name);
}

void WriteJson(const std::filesystem::path& path, const nlohmann::json& j) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error(kStage, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

nlohmann::json ReadJson(const std::filesystem::path& path, const char* stage) {
  std::ifstream in(path);
  if (!in) throw Error(stage, "missing " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(stage, "corrupt " + path.string() + ": " + e.what());
  }
}

nlohmann::json LossJson(const LossReport& r, TaskKind task) {
  if (task == TaskKind::kRegression) return {{"loss", r.loss}, {"mape", r.mape}};
  return {{"loss", r.loss}, {"auroc", r.auroc}, {"accuracy", r.accuracy}};
}

std::vector<std::string> SubsetNames(const FeatureSubset& s, const FeatureSchema& schema) {
  std::vector<std::string> out;
  for (int f : s.indices()) out.push_back(schema.names()[f]);
  return out;
}

std::vector<int> ResolveFeatures(const std::vector<std::string>& names, const FeatureSchema& schema) {
  std::vector<int> out;
  for (const auto& n : names) {
    const auto idx = schema.IndexOf(n);
    if (idx < 0) throw Error("config", "unknown feature '" + n + "'");
    out.push_back(static_cast<int>(idx));
  }
  std::sort(out.begin(), out.end());
  return out;
}

double MeanOf(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double PopulationStd(const std::vector<double>& v) {
  const double m = MeanOf(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return v.empty() ? 0.0 : std::sqrt(ss / static_cast<double>(v.size()));
}

}  // namespace

void RunConfig::Validate() const {
  if (dataset.empty()) throw Error("config", "data.path is required");
  if (target.empty()) throw Error("config", "data.target is required");
  if (!(train_fraction > 0 && train_fraction < 1)) throw Error("config", "train_fraction must lie in (0, 1)");
  if (!(val_fraction > 0 && val_fraction < 1)) throw Error("config", "val_fraction must lie in (0, 1)");
  if (!(epsilon >= 0)) throw Error("config", "epsilon must be non-negative");
  if (k_min != 0 && k_min < 2) throw Error("config", "cluster.k_min must be >= 2");
  if (k_max != 0 && k_max < std::max(k_min, 2)) throw Error("config", "cluster.k_max must be >= k_min");
  if (restarts < 1) throw Error("config", "cluster.restarts must be >= 1");
  if (search.max_size < 0 || search.max_size > max_size) {
    throw Error("config", "search.max_size must lie in [1, sampling.max_size] (0 means sampling.max_size)");
  }
  if (search.max_expansions < 0) throw Error("config", "search.max_expansions must be >= 0");
  if (!(search.lambda >= 0 && search.lambda <= 1)) throw Error("config", "search.lambda must lie in [0, 1]");
  if (risk_bins < 1) throw Error("config", "ensemble.risk_bins must be >= 1");
  if (drift_repeats < 1) throw Error("config", "drift.repeats must be >= 1");
  if (combiner == CombinerKind::kStacking && task != TaskKind::kBinaryClassification) {
    throw Error("config", "stacking is only available for classification");
  }
  tree.Validate();
}

std::filesystem::path RunConfig::DatasetPath() const {
  const std::filesystem::path p(dataset);
  return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
}

void ApplyOverride(nlohmann::json& config, const std::string& key, const std::string& value) {
  nlohmann::json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw Error("config", "malformed override key '" + key + "'");
    if (dot == std::string::npos) {
      nlohmann::json parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[part] = parsed.is_discarded() ? nlohmann::json(value) : parsed;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

RunConfig RunConfigFromJson(nlohmann::json j, const std::filesystem::path& base_dir) {
  CheckKeys(j, "config", {"data", "seed", "sampling", "tree", "rashomon", "cluster", "search",
                          "ensemble", "drift", "explain", "ablation", "output_dir"});
  RunConfig c;
  c.base_dir = base_dir;
  try {
    const auto data = Section(j, "data", {"path", "target", "task", "categorical", "train_fraction",
                                          "val_fraction", "split_seed", "standardize"});
    c.dataset = data.value("path", std::string());
    c.target = data.value("target", std::string());
    c.task = ParseTaskKind(data.value("task", std::string("binary-classification")));
    c.categorical = data.value("categorical", std::vector<std::string>{});
    c.train_fraction = data.value("train_fraction", c.train_fraction);
    c.val_fraction = data.value("val_fraction", c.val_fraction);
    c.split_seed = data.value("split_seed", c.split_seed);
    c.standardize = data.value("standardize", c.standardize);
    c.seed = j.value("seed", c.seed);

    const auto sampling = Section(j, "sampling", {"key_size", "max_size", "alpha", "n_models", "size_mode"});
    c.key_size = sampling.value("key_size", c.key_size);
    c.max_size = sampling.value("max_size", c.max_size);
    c.alpha = sampling.value("alpha", c.alpha);
    c.n_models = sampling.value("n_models", c.n_models);
    const std::string mode = sampling.value("size_mode", std::string("uniform"));
    if (mode == "uniform") {
      c.size_mode = SizeMode::kUniform;
    } else if (mode == "stratified") {
      c.size_mode = SizeMode::kStratified;
    } else {
      throw Error("config", "unknown sampling.size_mode '" + mode + "'");
    }

    nlohmann::json tree = TreeParams::ForTask(c.task).criterion == SplitCriterion::kGini
                              ? nlohmann::json{{"criterion", "gini"}}
                              : nlohmann::json{{"criterion", "variance"}};
    tree.update(Section(j, "tree", {"max_depth", "min_samples_leaf", "criterion"}));
    c.tree = TreeParamsFromJson(tree);

    const auto rashomon = Section(j, "rashomon", {"reference", "epsilon"});
    if (rashomon.contains("reference")) c.reference = ReferenceSpecFromJson(rashomon.at("reference"));
    c.epsilon = rashomon.value("epsilon", c.epsilon);

    const auto cluster = Section(j, "cluster", {"k_min", "k_max", "restarts", "silhouette_sample"});
    c.k_min = cluster.value("k_min", c.k_min);
    c.k_max = cluster.value("k_max", c.k_max);
    c.restarts = cluster.value("restarts", c.restarts);
    c.silhouette_sample = cluster.value("silhouette_sample", c.silhouette_sample);

    const auto search = Section(j, "search", {"max_size", "max_expansions", "lambda", "ensemble_loss",
                                              "barred_features"});
    // The search width m defaults to the sampler's S_max.
    c.search.max_size = search.value("max_size", c.max_size);
    c.search.max_expansions = search.value("max_expansions", c.search.max_expansions);
    c.search.lambda = search.value("lambda", c.search.lambda);
    c.ensemble_loss = search.value("ensemble_loss", c.ensemble_loss);
    c.barred_features = search.value("barred_features", c.barred_features);

    const auto ensemble = Section(j, "ensemble", {"combiner", "vote_threshold", "risk_bins"});
    const std::string combiner = ensemble.value("combiner", std::string("voting"));
    if (combiner == "voting") {
      c.combiner = CombinerKind::kVoting;
    } else if (combiner == "stacking") {
      c.combiner = CombinerKind::kStacking;
    } else {
      throw Error("config", "unknown ensemble.combiner '" + combiner + "'");
    }
    c.vote_threshold = ensemble.value("vote_threshold", c.vote_threshold);
    c.risk_bins = ensemble.value("risk_bins", c.risk_bins);

    const auto drift = Section(j, "drift", {"levels", "shuffle_levels", "repeats"});
    c.drift_levels = drift.value("levels", c.drift_levels);
    c.shuffle_levels = drift.value("shuffle_levels", c.shuffle_levels);
    c.drift_repeats = drift.value("repeats", c.drift_repeats);

    const auto explain = Section(j, "explain", {"background_cap", "audit"});
    c.background_cap = explain.value("background_cap", c.background_cap);
    c.audit_explanations = explain.value("audit", c.audit_explanations);

    const auto ablation = Section(j, "ablation", {"n_models", "repeats"});
    c.ablation_n_models = ablation.value("n_models", c.ablation_n_models);
    c.ablation_repeats = ablation.value("repeats", c.ablation_repeats);

    if (j.contains("output_dir")) {
      const std::filesystem::path out(j.at("output_dir").get<std::string>());
      c.output_dir = out.is_absolute() || base_dir.empty() ? out : base_dir / out;
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("config", std::string("invalid config value: ") + e.what());
  }
  c.Validate();
  return c;
}

RunConfig LoadRunConfig(const std::filesystem::path& path,
                        const std::map<std::string, std::string>& overrides) {
  nlohmann::json j = ReadJson(path, "config");
  for (const auto& [key, value] : overrides) ApplyOverride(j, key, value);
  return RunConfigFromJson(std::move(j), std::filesystem::absolute(path).parent_path());
}

nlohmann::json ToJson(const RunConfig& c) {
  nlohmann::json j = {
      {"data",
       {{"path", std::filesystem::absolute(c.DatasetPath()).lexically_normal().string()},
        {"target", c.target},
        {"task", TaskKindName(c.task)},
        {"categorical", c.categorical},
        {"train_fraction", c.train_fraction},
        {"val_fraction", c.val_fraction},
        {"split_seed", c.split_seed},
        {"standardize", c.standardize}}},
      {"seed", c.seed},
      {"sampling",
       {{"key_size", c.key_size},
        {"max_size", c.max_size},
        {"alpha", c.alpha},
        {"n_models", c.n_models},
        {"size_mode", c.size_mode == SizeMode::kUniform ? "uniform" : "stratified"}}},
      {"tree", ToJson(c.tree)},
      {"rashomon", {{"reference", ToJson(c.reference)}, {"epsilon", c.epsilon}}},
      {"cluster",
       {{"k_min", c.k_min},
        {"k_max", c.k_max},
        {"restarts", c.restarts},
        {"silhouette_sample", c.silhouette_sample}}},
      {"search",
       {{"max_size", c.search.max_size},
        {"max_expansions", c.search.max_expansions},
        {"lambda", c.search.lambda},
        {"ensemble_loss", c.ensemble_loss},
        {"barred_features", c.barred_features}}},
      {"ensemble",
       {{"combiner", c.combiner == CombinerKind::kVoting ? "voting" : "stacking"},
        {"vote_threshold", c.vote_threshold},
        {"risk_bins", c.risk_bins}}},
      {"drift", {{"levels", c.drift_levels}, {"shuffle_levels", c.shuffle_levels}, {"repeats", c.drift_repeats}}},
      {"explain", {{"background_cap", c.background_cap}, {"audit", c.audit_explanations}}},
      {"ablation", {{"n_models", c.ablation_n_models}, {"repeats", c.ablation_repeats}}}};
  return j;
}

PreparedData PrepareData(const RunConfig& config) {
  try {
    Dataset all = LoadCsv(config.DatasetPath(),
                          CsvOptions{config.target, config.task, config.categorical});
    auto [train_full, test] = Split(all, config.train_fraction, config.split_seed);
    auto [train, val] = Split(train_full, 1.0 - config.val_fraction, DeriveSeed(config.split_seed, 1));
    ScalerParams scaler;
    if (config.standardize) {
      auto s = Standardize(train, {val, test, train_full});
      train = std::move(s.train);
      val = std::move(s.others[0]);
      test = std::move(s.others[1]);
      train_full = std::move(s.others[2]);
      scaler = std::move(s.params);
    }
    Dataset background = CapBackground(train, config.background_cap,
                                       DeriveSeed(config.seed, kBackgroundSeed));
    return PreparedData{std::move(all), std::move(train), std::move(val), std::move(train_full),
                        std::move(test), std::move(background), std::move(scaler)};
  } catch (const Error& e) {
    throw Error("data", e.what());
  }
}

Points ExplanationPoints(const RashomonSet& rset) {
  Points points;
  points.reserve(rset.members.size());
  for (const auto& m : rset.members) points.push_back(m.explanation.values);
  return points;
}

nlohmann::json EnsembleMetrics(const Ensemble& ensemble, const PreparedData& data) {
  const auto val = EvaluatePredictions(PredictAll(ensemble, data.validation), data.validation);
  const auto test = EvaluatePredictions(PredictAll(ensemble, data.test), data.test);
  return {{"constituents", ensemble.constituents.size()},
          {"combiner", ensemble.combiner == CombinerKind::kVoting ? "voting" : "stacking"},
          {"validation", LossJson(val, ensemble.task)},
          {"test", LossJson(test, ensemble.task)}};
}

std::vector<Constituent> SearchAllClusters(const RunConfig& config, const PreparedData& data,
                                           const RashomonSet& rset, const ClusterModel& clusters,
                                           const std::vector<int>& clusters_to_search,
                                           const std::vector<int>& barred, ExplanationAudit* audit,
                                           const std::filesystem::path& trace_dir) {
  const std::set<int> barred_set(barred.begin(), barred.end());
  const auto uses_barred = [&](const FeatureSubset& s) {
    return std::any_of(s.indices().begin(), s.indices().end(),
                       [&](int f) { return barred_set.count(f) > 0; });
  };
  const Points points = ExplanationPoints(rset);

  struct Slot {
    std::optional<Constituent> constituent;
    std::string trace;
    ExplanationAudit audit;
  };
  std::vector<Slot> slots(clusters_to_search.size());
  tbb::parallel_for(std::size_t{0}, clusters_to_search.size(), [&](std::size_t s) {
    const int c = clusters_to_search[s];
    int root = clusters.clusteroids.at(c);
    if (uses_barred(rset.members[root].subset)) {
      root = -1;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (clusters.assignment[i] != c || uses_barred(rset.members[i].subset)) continue;
        double d = 0;
        for (std::size_t j = 0; j < points[i].size(); ++j) {
          d += (points[i][j] - clusters.centroids[c][j]) * (points[i][j] - clusters.centroids[c][j]);
        }
        if (d < best) {
          best = d;
          root = static_cast<int>(i);
        }
      }
      if (root < 0) return;
    }
    std::ostringstream trace;
    SearchOptions options;
    options.ensemble_loss = config.ensemble_loss;
    options.barred_features = barred;
    options.root_member = root;
    options.trace = trace_dir.empty() ? nullptr : &trace;
    SearchInputs inputs{clusters, rset, data.train, data.validation, data.background, config.tree,
                        audit != nullptr ? &slots[s].audit : nullptr};
    SearchBudget budget = config.search;
    if (budget.max_size == 0) budget.max_size = config.max_size;
    const SearchResult r = SearchConstituent(c, inputs, budget, options);
    Constituent out;
    out.model = r.model;
    if (out.model.id < 0) out.model.id = static_cast<int>(rset.n_sampled) + c;
    out.cluster = c;
    out.clusteroid_id = rset.members[root].id;
    out.search_score = r.score;
    out.clusteroid_score = r.clusteroid_score;
    out.expansions = r.expansions;
    slots[s].constituent = std::move(out);
    slots[s].trace = trace.str();
  });

  std::vector<Constituent> out;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    if (audit != nullptr) audit->Merge(slots[s].audit);
    if (!trace_dir.empty()) {
      std::filesystem::create_directories(trace_dir);
      std::ofstream(trace_dir / ("cluster_" + std::to_string(clusters_to_search[s]) + ".jsonl"))
          << slots[s].trace;
    }
    if (slots[s].constituent) out.push_back(std::move(*slots[s].constituent));
  }
  return out;
}

Ensemble AssembleEnsemble(const RunConfig& config, const PreparedData& data,
                          const std::vector<Constituent>& constituents) {
  std::vector<CandidateModel> models;
  for (const auto& c : constituents) models.push_back(c.model);
  if (models.empty()) throw Error("ensemble", "no constituents to combine");
  Ensemble e;
  if (config.combiner == CombinerKind::kStacking) {
    e = FitStacking(models, data.train_full, config.tree, DeriveSeed(config.seed, kStackingSeed));
  } else {
    e.constituents = std::move(models);
    e.combiner = CombinerKind::kVoting;
  }
  e.task = config.task;
  e.vote_threshold = config.vote_threshold;
  e.Validate();
  return e;
}

RunResult RunPipeline(const RunConfig& config) {
  config.Validate();
  nlohmann::json timings = nlohmann::json::object();
  const auto total_start = Clock::now();
  auto start = Clock::now();
  const std::filesystem::path& out = config.output_dir;
  if (!out.empty()) std::filesystem::create_directories(out);

  const PreparedData data = PrepareData(config);
  const FeatureSchema& schema = data.train.schema();
  const std::vector<int> barred = ResolveFeatures(config.barred_features, schema);
  timings["data"] = Seconds(start);

  // Sampling and filtering.
  start = Clock::now();
  SamplingPlan plan{static_cast<int>(data.train.cols()), config.key_size, config.max_size, config.alpha,
                    config.n_models, DeriveSeed(config.seed, kSamplingSeed), config.size_mode};
  ExplanationAudit audit;
  ExplanationAudit* audit_ptr = config.audit_explanations ? &audit : nullptr;
  RunResult result;
  try {
    plan.Validate();
    const auto candidates = SampleCandidates(plan);
    result.rset = BuildRashomonSet(
        candidates, RashomonInputs{data.train, data.validation, data.background, config.tree, audit_ptr},
        config.reference, config.epsilon);
  } catch (const Error& e) {
    throw Error("rashomon", e.what());
  }
  const RashomonSet& rset = result.rset;
  if (rset.members.empty()) {
    throw Error("rashomon", "empty Rashomon set: no candidate within " + FormatDouble(config.epsilon) +
                                " of reference loss " + FormatDouble(rset.ref_loss));
  }
  timings["rashomon"] = Seconds(start);

  // Clustering.
  start = Clock::now();
  const Points points = ExplanationPoints(rset);
  const std::size_t distinct = CountDistinct(points);
  if (distinct < 2) {
    throw Error("cluster", "cluster count < 2: the Rashomon set has " + std::to_string(distinct) +
                               " distinct explanation vector(s)");
  }
  auto [k_min, k_max] = DefaultKRange(points);
  if (config.k_min > 0) k_min = config.k_min;
  if (config.k_max > 0) k_max = std::min(config.k_max, static_cast<int>(distinct));
  k_max = std::max(k_max, 2);
  k_min = std::min(k_min, k_max);
  try {
    result.clusters = SelectK(points, k_min, k_max, DeriveSeed(config.seed, kClusterSeed),
                              SelectKOptions{config.restarts, config.silhouette_sample});
  } catch (const Error& e) {
    throw Error("cluster", e.what());
  }
  timings["cluster"] = Seconds(start);

  // Constituent search.
  start = Clock::now();
  std::vector<int> all_clusters(result.clusters.k);
  std::iota(all_clusters.begin(), all_clusters.end(), 0);
  try {
    result.constituents = SearchAllClusters(config, data, rset, result.clusters, all_clusters, barred,
                                            audit_ptr, out.empty() ? out : out / "search");
  } catch (const Error& e) {
    throw Error("search", e.what());
  }
  timings["search"] = Seconds(start);

  // Ensemble and reports.
  start = Clock::now();
  result.ensemble = AssembleEnsemble(config, data, result.constituents);
  std::vector<int> all(data.train.cols());
  std::iota(all.begin(), all.end(), 0);
  result.reference_tree = FitTree(data.train_full, FeatureSubset(all), config.tree);
  result.reference_explanation =
      TreeExplainer(result.reference_tree, data.background).MeanAbsolute(data.validation, audit_ptr);
  const Tree inner_reference = FitTree(data.train, FeatureSubset(all), config.tree);

  nlohmann::json ensemble_json = EnsembleMetrics(result.ensemble, data);
  const bool classification = config.task == TaskKind::kBinaryClassification;
  double best_constituent_val = classification ? 0.0 : std::numeric_limits<double>::infinity();
  nlohmann::json constituents_json = nlohmann::json::array();
  for (const auto& c : result.constituents) {
    const auto test = Evaluate(c.model.tree, data.test);
    constituents_json.push_back({{"id", c.model.id},
                                 {"cluster", c.cluster},
                                 {"clusteroid_id", c.clusteroid_id},
                                 {"subset", SubsetNames(c.model.subset, schema)},
                                 {"subset_indices", c.model.subset.indices()},
                                 {"validation", LossJson(c.model.validation, config.task)},
                                 {"test", LossJson(test, config.task)},
                                 {"search_score", c.search_score},
                                 {"clusteroid_score", c.clusteroid_score},
                                 {"expansions", c.expansions}});
    best_constituent_val = classification ? std::max(best_constituent_val, c.model.validation.auroc)
                                          : std::min(best_constituent_val, c.model.validation.mape);
  }
  nlohmann::json comparison = {
      {"reference_tree_outer_train",
       {{"validation", LossJson(Evaluate(result.reference_tree, data.validation), config.task)},
        {"test", LossJson(Evaluate(result.reference_tree, data.test), config.task)}}},
      {"reference_tree_inner_train",
       {{"validation", LossJson(Evaluate(inner_reference, data.validation), config.task)},
        {"test", LossJson(Evaluate(inner_reference, data.test), config.task)}}},
      {classification ? "best_constituent_val_auroc" : "best_constituent_val_mape", best_constituent_val}};
  if (classification) {
    Ensemble voting = result.ensemble;
    voting.combiner = CombinerKind::kVoting;
    comparison["voting"] = EnsembleMetrics(voting, data);
    try {
      const Ensemble stacked = AssembleEnsemble(
          [&] {
            RunConfig c = config;
            c.combiner = CombinerKind::kStacking;
            return c;
          }(),
          data, result.constituents);
      comparison["stacking"] = EnsembleMetrics(stacked, data);
    } catch (const Error& e) {
      comparison["stacking"] = {{"error", e.what()}};
    }
    const auto sim = CompareToReference(result.ensemble, result.reference_tree,
                                        result.reference_explanation, data.test);
    comparison["similarity_to_reference"] = {{"jaccard", sim.jaccard}, {"shap_cosine", sim.shap_cosine}};
  }

  nlohmann::json risk_json = nullptr;
  std::vector<RiskBucket> risk;
  if (classification) {
    risk = RiskStratify(result.ensemble, data.test, config.risk_bins);
    risk_json = ToJson(risk);
  }
  timings["ensemble"] = Seconds(start);

  start = Clock::now();
  std::optional<DriftReport> gaussian, shuffle;
  if (!config.drift_levels.empty()) {
    gaussian = DriftExperiment(result.ensemble, data.test, config.drift_levels, PerturbationKind::kGaussian,
                               DeriveSeed(config.seed, kDriftSeed), config.drift_repeats);
  }
  if (!config.shuffle_levels.empty()) {
    shuffle = DriftExperiment(result.ensemble, data.test, config.shuffle_levels, PerturbationKind::kShuffle,
                              DeriveSeed(config.seed, kShuffleSeed), config.drift_repeats);
  }
  timings["drift"] = Seconds(start);

  const auto sizes = result.clusters.ClusterSizes();
  nlohmann::json manifest = {
      {"version", kVersion},
      {"config", ToJson(config)},
      {"data",
       {{"rows", data.all.rows()},
        {"features", schema.names()},
        {"train_rows", data.train.rows()},
        {"validation_rows", data.validation.rows()},
        {"test_rows", data.test.rows()},
        {"background_rows", data.background.rows()}}},
      {"seeds",
       {{"split", config.split_seed},
        {"sampling", plan.seed},
        {"background", DeriveSeed(config.seed, kBackgroundSeed)},
        {"cluster", DeriveSeed(config.seed, kClusterSeed)},
        {"stacking", DeriveSeed(config.seed, kStackingSeed)},
        {"drift", DeriveSeed(config.seed, kDriftSeed)},
        {"shuffle", DeriveSeed(config.seed, kShuffleSeed)}}},
      {"rashomon",
       {{"n_sampled", rset.n_sampled},
        {"n_distinct_sampled", rset.n_distinct_sampled},
        {"n_members", rset.members.size()},
        {"ratio", RashomonRatio(rset)},
        {"ref_loss", rset.ref_loss},
        {"epsilon", rset.epsilon},
        {"inclusion_probability", SubsetInclusionProbability(plan.num_features, plan.key_size, plan.max_size)},
        {"required_sample_size",
         [&]() -> nlohmann::json {
           try {
             return RequiredSampleSize(plan.num_features, plan.key_size, plan.max_size, plan.alpha);
           } catch (const Error&) {
             return nullptr;
           }
         }()}}},
      {"clusters",
       {{"k", result.clusters.k},
        {"k_range", {k_min, k_max}},
        {"silhouette", result.clusters.silhouette},
        {"sizes", sizes},
        {"clusteroid_ids",
         [&] {
           std::vector<int> ids;
           for (int p : result.clusters.clusteroids) ids.push_back(rset.members[p].id);
           return ids;
         }()}}},
      {"constituents", constituents_json},
      {"ensemble", ensemble_json},
      {"comparison", comparison},
      {"risk", risk_json},
      {"drift",
       {{"gaussian", gaussian ? ToJson(*gaussian) : nlohmann::json(nullptr)},
        {"shuffle", shuffle ? ToJson(*shuffle) : nlohmann::json(nullptr)}}},
      {"explanation_audit",
       config.audit_explanations
           ? nlohmann::json{{"explanations", audit.explanations},
                            {"max_local_accuracy_error", audit.max_local_accuracy_error},
                            {"missingness_violations", audit.missingness_violations}}
           : nlohmann::json(nullptr)}};

  if (!out.empty()) {
    start = Clock::now();
    WriteJson(out / "config.json", ToJson(config));
    SaveRashomonSet(rset, plan, schema, out / "rashomon");
    WriteJson(out / "clusters" / "model.json", ToJson(result.clusters));
    std::vector<int> member_ids;
    for (const auto& m : rset.members) member_ids.push_back(m.id);
    WriteClusterReport(out / "clusters" / "clusters.csv", member_ids, result.clusters, points);
    WriteJson(out / "ensemble" / "ensemble.json", ToJson(result.ensemble));
    WriteJson(out / "ensemble" / "metrics.json", {{"ensemble", ensemble_json}, {"comparison", comparison}});
    if (classification) {
      WriteJson(out / "ensemble" / "risk.json", risk_json);
      WriteRiskCsv(out / "ensemble" / "risk.csv", risk);
    }
    WriteJson(out / "reference" / "tree.json", ToJson(result.reference_tree));
    for (const auto& [name, report] : {std::pair{"gaussian", &gaussian}, std::pair{"shuffle", &shuffle}}) {
      if (!*report) continue;
      WriteJson(out / "drift" / (std::string(name) + ".json"), ToJson(**report));
      WriteDriftCsv(out / "drift" / (std::string(name) + ".csv"), **report);
      WriteDriftGnuplot(out / "drift" / (std::string(name) + ".dat"), **report);
    }
    timings["write"] = Seconds(start);
  }
  timings["total"] = Seconds(total_start);
  manifest["timings"] = timings;
  if (!out.empty()) WriteJson(out / "manifest.json", manifest);
  result.manifest = std::move(manifest);
  return result;
}

LoadedRun LoadRun(const std::filesystem::path& dir) {
  LoadedRun run;
  try {
    run.config = RunConfigFromJson(ReadJson(dir / "config.json", "load"), dir);
    run.config.output_dir = dir;
    run.manifest = ReadJson(dir / "manifest.json", "load");
    run.data = PrepareData(run.config);
    run.rset = LoadRashomonSet(dir / "rashomon");
    run.clusters = ClusterModelFromJson(ReadJson(dir / "clusters" / "model.json", "load"));
    run.ensemble = EnsembleFromJson(ReadJson(dir / "ensemble" / "ensemble.json", "load"));
  } catch (const Error& e) {
    throw Error("load", std::string("cannot load run directory ") + dir.string() + ": " + e.what());
  }
  const auto& listed = run.manifest.at("constituents");
  if (listed.size() != run.ensemble.constituents.size() ||
      run.clusters.assignment.size() != run.rset.members.size()) {
    throw Error("load", "run directory " + dir.string() + " is inconsistent");
  }
  for (std::size_t i = 0; i < listed.size(); ++i) {
    Constituent c;
    c.model = run.ensemble.constituents[i];
    c.cluster = listed[i].at("cluster").get<int>();
    c.clusteroid_id = listed[i].at("clusteroid_id").get<int>();
    c.search_score = listed[i].at("search_score").get<double>();
    c.clusteroid_score = listed[i].at("clusteroid_score").get<double>();
    c.expansions = listed[i].at("expansions").get<int>();
    run.constituents.push_back(std::move(c));
  }
  return run;
}

AblationScenario ParseAblationScenario(const std::string& name) {
  if (name == "I" || name == "1") return AblationScenario::kI;
  if (name == "II" || name == "2") return AblationScenario::kII;
  if (name == "III" || name == "3") return AblationScenario::kIII;
  throw Error("ablation", "unknown scenario '" + name + "' (expected I, II or III)");
}

std::string AblationScenarioName(AblationScenario scenario) {
  switch (scenario) {
    case AblationScenario::kI:
      return "I";
    case AblationScenario::kII:
      return "II";
    case AblationScenario::kIII:
      return "III";
  }
  return "?";
}

SimilarityReport CompareEnsembles(const Ensemble& a, const Ensemble& b, const Dataset& dataset) {
  const auto pa = PredictAll(a, dataset);
  const auto pb = PredictAll(b, dataset);
  std::vector<bool> sa(pa.size()), sb(pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    sa[i] = pa[i] >= 0.5;
    sb[i] = pb[i] >= 0.5;
  }
  const auto mean_explanation = [](const Ensemble& e) {
    std::vector<double> m(e.constituents.front().explanation.values.size(), 0.0);
    for (const auto& c : e.constituents) {
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] += c.explanation.values[j] / static_cast<double>(e.constituents.size());
      }
    }
    return m;
  };
  return {Jaccard(sa, sb), CosineSimilarity(mean_explanation(a), mean_explanation(b))};
}

AblationReport RunAblation(const LoadedRun& reference, AblationScenario scenario, int repeats) {
  if (repeats < 1) throw Error("ablation", "repeats must be >= 1");
  if (reference.config.task != TaskKind::kBinaryClassification) {
    throw Error("ablation", "ablation similarity needs a classification run");
  }
  AblationReport report;
  report.scenario = scenario;
  report.points.resize(repeats);
  const RunConfig& base = reference.config;
  const std::size_t k = static_cast<std::size_t>(reference.clusters.k);

  for (int r = 0; r < repeats; ++r) {
    std::vector<Constituent> picked;
    std::mt19937_64 rng(DeriveSeed(DeriveSeed(base.seed, kAblationSeed), static_cast<uint64_t>(r)));
    switch (scenario) {
      case AblationScenario::kI: {
        RunConfig c = base;
        c.seed = base.seed + static_cast<uint64_t>(r);
        if (base.ablation_n_models > 0) c.n_models = base.ablation_n_models;
        c.output_dir.clear();
        c.drift_levels.clear();
        c.shuffle_levels.clear();
        c.audit_explanations = false;
        const RunResult run = RunPipeline(c);
        report.points[r] = CompareEnsembles(run.ensemble, reference.ensemble, reference.data.test);
        continue;
      }
      case AblationScenario::kII: {
        std::vector<std::vector<int>> by_cluster(k);
        for (std::size_t i = 0; i < reference.clusters.assignment.size(); ++i) {
          by_cluster[reference.clusters.assignment[i]].push_back(static_cast<int>(i));
        }
        for (std::size_t c = 0; c < k; ++c) {
          std::uniform_int_distribution<std::size_t> pick(0, by_cluster[c].size() - 1);
          picked.push_back({reference.rset.members[by_cluster[c][pick(rng)]], static_cast<int>(c)});
        }
        break;
      }
      case AblationScenario::kIII: {
        // Every member already satisfies the run's band, so the performance
        // filter keeps all draws.
        std::vector<int> idx(reference.rset.members.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        for (std::size_t c = 0; c < std::min(k, idx.size()); ++c) {
          const auto& m = reference.rset.members[idx[c]];
          if (reference.rset.Admits(m.val_loss)) picked.push_back({m, reference.clusters.assignment[idx[c]]});
        }
        break;
      }
    }
    const Ensemble e = AssembleEnsemble(base, reference.data, picked);
    report.points[r] = CompareEnsembles(e, reference.ensemble, reference.data.test);
  }

  std::vector<double> jac, cos;
  for (const auto& p : report.points) {
    jac.push_back(p.jaccard);
    cos.push_back(p.shap_cosine);
  }
  report.jaccard_mean = MeanOf(jac);
  report.jaccard_std = PopulationStd(jac);
  report.cosine_mean = MeanOf(cos);
  report.cosine_std = PopulationStd(cos);
  return report;
}

nlohmann::json ToJson(const AblationReport& report) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : report.points) points.push_back({{"jaccard", p.jaccard}, {"shap_cosine", p.shap_cosine}});
  return {{"scenario", AblationScenarioName(report.scenario)},
          {"repeats", report.points.size()},
          {"jaccard_mean", report.jaccard_mean},
          {"jaccard_std", report.jaccard_std},
          {"shap_cosine_mean", report.cosine_mean},
          {"shap_cosine_std", report.cosine_std},
          {"note", report.scenario == AblationScenario::kIII
                       ? "performance filter uses the run's own epsilon band"
                       : ""},
          {"points", points}};
}

}  // namespace rashens
