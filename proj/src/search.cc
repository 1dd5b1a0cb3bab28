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

#include "rashens/search.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>

#include <nlohmann/json.hpp>
#include <tbb/parallel_for.h>

#include "rashens/common.h"
#include "rashens/ensemble.h"
#include "rashens/explain.h"
#include "rashens/metrics.h"

namespace rashens {
namespace {

constexpr const char* kStage = "search";

double SquaredDistance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return s;
}

struct Node {
  FeatureSubset subset;
  Tree tree;
  LossReport validation;
  ExplanationVector explanation;
  double score = 0.0;
};

// Frontier key: highest score first, then smaller subset.
struct FrontierOrder {
  bool operator()(const std::pair<double, FeatureSubset>& a,
                  const std::pair<double, FeatureSubset>& b) const {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  }
};

void Trace(const SearchOptions& options, int expansion, const FeatureSubset& subset,
           const char* status, const char* reason, const Node* node) {
  if (options.trace == nullptr) return;
  nlohmann::json j = {{"expansion", expansion}, {"subset", subset.indices()}, {"status", status}};
  if (reason != nullptr) j["reason"] = reason;
  if (node != nullptr) {
    j["val_loss"] = node->validation.loss;
    j["score"] = node->score;
  }
  *options.trace << j.dump() << '\n';
}

}  // namespace

std::vector<FeatureSubset> Expand(const FeatureSubset& subset, int num_features) {
  std::vector<FeatureSubset> out;
  for (int f = 0; f < num_features; ++f) {
    if (!subset.Contains(f)) out.push_back(subset.With(f));
  }
  return out;
}

bool MembershipCheck(const std::vector<double>& candidate, const Points& centroids, int home) {
  if (home < 0 || home >= static_cast<int>(centroids.size())) {
    throw Error(kStage, "home cluster id out of range");
  }
  const double home_d = SquaredDistance(candidate, centroids[home]);
  for (int c = 0; c < static_cast<int>(centroids.size()); ++c) {
    if (c == home) continue;
    const double d = SquaredDistance(candidate, centroids[c]);
    if (d < home_d || (d == home_d && c < home)) return false;
  }
  return true;
}

double NormalizedPredictionDistance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(kStage, "prediction vectors differ in length");
  if (a.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::abs(a[i]) + std::abs(b[i]);
    if (denom > 0) s += std::abs(a[i] - b[i]) / denom;
  }
  return s / static_cast<double>(a.size());
}

double NodeScore(std::span<const double> predictions, const Dataset& validation,
                 const std::vector<std::vector<double>>& others, double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error(kStage, "lambda must lie in [0, 1]");
  const bool classification = validation.task() == TaskKind::kBinaryClassification;
  const double performance = classification ? Auroc(predictions, validation.labels())
                                            : 1.0 - Mape(predictions, validation.labels());
  double divergence = 0.0;
  for (const auto& o : others) {
    divergence += classification ? MeanBernoulliJsd(predictions, o)
                                 : NormalizedPredictionDistance(predictions, o);
  }
  if (!others.empty()) divergence /= static_cast<double>(others.size());
  return (1.0 - lambda) * performance + lambda * divergence;
}

double NodeScore(const Tree& tree, const Dataset& validation,
                 const std::vector<std::vector<double>>& others, double lambda) {
  return NodeScore(tree.PredictAll(validation), validation, others, lambda);
}

SearchResult SearchConstituent(int home, const SearchInputs& in, const SearchBudget& budget,
                               const SearchOptions& options) {
  const ClusterModel& clusters = in.clusters;
  if (home < 0 || home >= clusters.k) throw Error(kStage, "home cluster id out of range");
  if (std::find(clusters.assignment.begin(), clusters.assignment.end(), home) ==
      clusters.assignment.end()) {
    throw Error(kStage, "home cluster " + std::to_string(home) + " is empty");
  }
  if (budget.max_expansions < 0) throw Error(kStage, "max_expansions must be >= 0");
  const int num_features = static_cast<int>(in.train.cols());
  const int max_size = budget.max_size > 0 ? std::min(budget.max_size, num_features) : num_features;
  const std::set<int> barred(options.barred_features.begin(), options.barred_features.end());

  std::vector<std::vector<double>> others;
  for (int c = 0; c < clusters.k; ++c) {
    if (c != home) {
      others.push_back(in.rset.members.at(clusters.clusteroids[c]).tree.PredictAll(in.validation));
    }
  }
  const auto score_of = [&](const std::vector<double>& preds) {
    if (!options.ensemble_loss) return NodeScore(preds, in.validation, others, budget.lambda);
    Ensemble e;
    e.task = in.validation.task();
    std::vector<std::vector<double>> all = others;
    all.push_back(preds);
    std::vector<double> combined(preds.size(), 0.0);
    for (const auto& p : all) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        combined[i] += (e.task == TaskKind::kBinaryClassification ? (p[i] >= e.vote_threshold ? 1.0 : 0.0)
                                                                  : p[i]) /
                       static_cast<double>(all.size());
      }
    }
    return 1.0 - EvaluatePredictions(combined, in.validation).loss;
  };

  int root_index = clusters.clusteroids[home];
  if (options.root_member >= 0) {
    if (clusters.assignment.at(options.root_member) != home) {
      throw Error(kStage, "search root is not in the home cluster");
    }
    root_index = options.root_member;
  }
  const CandidateModel& root_model = in.rset.members.at(root_index);
  Node root{root_model.subset, root_model.tree, root_model.validation, root_model.explanation, 0.0};
  root.score = score_of(root.tree.PredictAll(in.validation));

  SearchResult result;
  result.clusteroid_score = root.score;
  std::map<FeatureSubset, Node> nodes;
  std::set<FeatureSubset> seen = {root.subset};
  std::set<std::pair<double, FeatureSubset>, FrontierOrder> frontier;
  const FeatureSubset* best = &root.subset;
  double best_score = root.score;
  nodes.emplace(root.subset, root);
  frontier.emplace(root.score, root.subset);
  Trace(options, 0, root.subset, "root", nullptr, &root);

  while (!frontier.empty() && result.expansions < budget.max_expansions) {
    const FeatureSubset parent = frontier.begin()->second;
    frontier.erase(frontier.begin());
    ++result.expansions;

    std::vector<FeatureSubset> children;
    for (FeatureSubset& child : Expand(parent, num_features)) {
      if (!seen.insert(child).second) continue;
      if (static_cast<int>(child.size()) > max_size) {
        Trace(options, result.expansions, child, "rejected", "size", nullptr);
        continue;
      }
      const bool has_barred = std::any_of(child.indices().begin(), child.indices().end(),
                                          [&](int f) { return barred.count(f) > 0; });
      if (has_barred) {
        Trace(options, result.expansions, child, "rejected", "barred", nullptr);
        continue;
      }
      children.push_back(std::move(child));
    }

    // Children are evaluated independently and merged in subset order.
    std::vector<std::optional<Node>> evaluated(children.size());
    std::vector<const char*> reasons(children.size(), nullptr);
    std::vector<ExplanationAudit> audits(children.size());
    tbb::parallel_for(std::size_t{0}, children.size(), [&](std::size_t i) {
      Node node;
      node.subset = children[i];
      node.tree = FitTree(in.train, node.subset, in.params);
      const auto preds = node.tree.PredictAll(in.validation);
      node.validation = EvaluatePredictions(preds, in.validation);
      if (!in.rset.Admits(node.validation.loss)) {
        reasons[i] = "band";
      } else {
        node.explanation = TreeExplainer(node.tree, in.background).MeanAbsolute(in.validation, &audits[i]);
        if (!MembershipCheck(node.explanation.values, clusters.centroids, home)) {
          reasons[i] = "cluster";
        } else {
          node.score = score_of(preds);
        }
      }
      evaluated[i] = std::move(node);
    });

    for (std::size_t i = 0; i < children.size(); ++i) {
      if (in.audit != nullptr) in.audit->Merge(audits[i]);
      ++result.evaluated;
      const Node& node = *evaluated[i];
      if (reasons[i] != nullptr) {
        Trace(options, result.expansions, node.subset, "rejected", reasons[i], &node);
        continue;
      }
      Trace(options, result.expansions, node.subset, "accepted", nullptr, &node);
      auto [it, inserted] = nodes.emplace(node.subset, node);
      if (node.score > best_score) {
        best_score = node.score;
        best = &it->first;
      }
      frontier.emplace(node.score, node.subset);
      if (frontier.size() > options.frontier_cap) frontier.erase(std::prev(frontier.end()));
    }
  }

  const Node& winner = nodes.at(*best);
  result.score = best_score;
  result.model.id = winner.subset == root.subset ? root_model.id : -1;
  result.model.subset = winner.subset;
  result.model.tree = winner.tree;
  result.model.validation = winner.validation;
  result.model.val_loss = winner.validation.loss;
  result.model.explanation = winner.explanation;
  return result;
}

}  // namespace rashens
