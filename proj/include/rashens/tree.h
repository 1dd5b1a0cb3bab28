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

#ifndef RASHENS_TREE_H_
#define RASHENS_TREE_H_

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rashens/data.h"
#include "rashens/metrics.h"

namespace rashens {

// Sorted set of distinct feature indices.
class FeatureSubset {
 public:
  FeatureSubset() = default;
  explicit FeatureSubset(std::vector<int> indices);

  const std::vector<int>& indices() const { return indices_; }
  std::size_t size() const { return indices_.size(); }
  bool empty() const { return indices_.empty(); }
  bool Contains(int feature) const;
  // Returns a new subset with `feature` added.
  FeatureSubset With(int feature) const;
  // Canonical text form, e.g. "1-4-7"; empty subset is "".
  std::string Key() const;

  auto operator<=>(const FeatureSubset&) const = default;

 private:
  std::vector<int> indices_;
};

enum class SplitCriterion { kGini, kVariance };

struct TreeParams {
  int max_depth = 8;
  int min_samples_leaf = 5;
  SplitCriterion criterion = SplitCriterion::kGini;

  static TreeParams ForTask(TaskKind task);
  void Validate() const;
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  double value = 0.0;  // positive-class fraction or mean target
  int count = 0;       // training samples reaching this node

  bool is_leaf() const { return feature < 0; }
};

class Tree {
 public:
  Tree() = default;
  Tree(std::vector<TreeNode> nodes, FeatureSubset subset, TreeParams params,
       std::size_t num_features);

  // Root-to-leaf traversal; value <= threshold goes left.
  double Predict(std::span<const double> row) const;
  std::vector<double> PredictAll(const Dataset& dataset) const;
  // Index of the leaf reached by `row`.
  int LeafIndex(std::span<const double> row) const;

  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const FeatureSubset& subset() const { return subset_; }
  const TreeParams& params() const { return params_; }
  std::size_t num_features() const { return num_features_; }
  int Depth() const;

  bool operator==(const Tree&) const;

 private:
  std::vector<TreeNode> nodes_;
  FeatureSubset subset_;
  TreeParams params_;
  std::size_t num_features_ = 0;
};

// Greedy CART restricted to `subset`. At each node the (feature, threshold)
// maximizing impurity decrease is chosen, thresholds are midpoints of
// consecutive distinct values, ties go to the lowest feature index and then
// the lowest threshold. Growth stops at max_depth, at zero impurity, or when
// no split leaves min_samples_leaf samples on both sides. The procedure
// consumes no randomness.
Tree FitTree(const Dataset& dataset, const FeatureSubset& subset,
             const TreeParams& params);

LossReport Evaluate(const Tree& tree, const Dataset& dataset);

nlohmann::json ToJson(const FeatureSubset& subset);
nlohmann::json ToJson(const TreeParams& params);
nlohmann::json ToJson(const Tree& tree);
FeatureSubset FeatureSubsetFromJson(const nlohmann::json& j);
TreeParams TreeParamsFromJson(const nlohmann::json& j);
Tree TreeFromJson(const nlohmann::json& j);

}  // namespace rashens

#endif  // RASHENS_TREE_H_
