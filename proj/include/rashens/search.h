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

#ifndef RASHENS_SEARCH_H_
#define RASHENS_SEARCH_H_

#include <cstddef>
#include <ostream>
#include <vector>

#include "rashens/cluster.h"
#include "rashens/data.h"
#include "rashens/explain.h"
#include "rashens/rashomon.h"
#include "rashens/tree.h"

namespace rashens {

// Subsets reachable by adding one absent feature, in added-feature order.
std::vector<FeatureSubset> Expand(const FeatureSubset& subset, int num_features);

// True iff the nearest centroid is `home`; on an exact tie, iff home has the
// lowest id among the tied centroids.
bool MembershipCheck(const std::vector<double>& candidate, const Points& centroids,
                     int home);

// Mean over rows of |a - b| / (|a| + |b|), with 0 where both are 0.
double NormalizedPredictionDistance(std::span<const double> a, std::span<const double> b);

// Classification: (1 - lambda) * AUROC + lambda * mean JSD to each of
// `others` (validation predictions of the other representatives).
// Regression: (1 - lambda) * (1 - MAPE) + lambda * mean normalized distance.
double NodeScore(std::span<const double> predictions, const Dataset& validation,
                 const std::vector<std::vector<double>>& others, double lambda);
double NodeScore(const Tree& tree, const Dataset& validation,
                 const std::vector<std::vector<double>>& others, double lambda);

struct SearchBudget {
  int max_size = 0;  // m; 0 means the number of features
  int max_expansions = 20;
  double lambda = 0.25;
};

struct SearchOptions {
  // Score a node by the voting ensemble formed with the other
  // representatives instead of by its own performance and divergence.
  bool ensemble_loss = false;
  std::vector<int> barred_features;
  std::size_t frontier_cap = 10000;
  // Member index (into rset.members) to start from instead of the home
  // clusteroid; it must belong to the home cluster.
  int root_member = -1;
  // Receives one JSON line per evaluated or rejected subset.
  std::ostream* trace = nullptr;
};

struct SearchInputs {
  const ClusterModel& clusters;
  // clusters.assignment and clusters.clusteroids index rset.members.
  const RashomonSet& rset;
  const Dataset& train;
  const Dataset& validation;
  const Dataset& background;
  TreeParams params;
  ExplanationAudit* audit = nullptr;
};

struct SearchResult {
  CandidateModel model;  // id is the clusteroid's when nothing improved, else -1
  double score = 0.0;
  double clusteroid_score = 0.0;
  int expansions = 0;
  int evaluated = 0;
};

// Best-first traversal of the addition-only subset lattice from the home
// cluster's clusteroid. Children are rejected when larger than the budget,
// when they add a barred feature, when their validation loss leaves the
// Rashomon band, or when their explanation vector lands nearer another
// centroid. The frontier pops the highest score first, ties to the
// lexicographically smaller subset. Returns the best node visited; a child
// must score strictly higher to replace the incumbent.
SearchResult SearchConstituent(int home, const SearchInputs& inputs,
                               const SearchBudget& budget, const SearchOptions& options = {});

}  // namespace rashens

#endif  // RASHENS_SEARCH_H_
