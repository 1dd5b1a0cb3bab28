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

#ifndef RASHENS_EXPLAIN_H_
#define RASHENS_EXPLAIN_H_

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "rashens/data.h"
#include "rashens/tree.h"

namespace rashens {

// Per-prediction attribution. base_value + sum(phi) equals the model output.
struct Explanation {
  std::vector<double> phi;
  double base_value = 0.0;
};

// Per-model reliance profile: mean |phi| per feature, L2-normalized (left at
// zero for constant models).
struct ExplanationVector {
  std::vector<double> values;

  bool IsZero() const;
};

// Running check of the per-row explanations behind MeanAbsolute: local
// accuracy (base value plus attributions equals the prediction) and
// missingness (features the tree never splits on get exactly zero).
struct ExplanationAudit {
  int64_t explanations = 0;
  double max_local_accuracy_error = 0.0;
  int64_t missingness_violations = 0;

  void Merge(const ExplanationAudit& other);
};

// Exact interventional Shapley values of a tree against a background sample.
//
// For one (row, background row) pair the game v(S) = f(row_S, background_~S)
// only changes at nodes where the two rows take different branches, so the
// tree is walked once, forking at every such node into a "feature taken from
// the row" and a "feature taken from the background" branch. A leaf reached
// with a_x row-features and a_b background-features distributes its value as
// +v (a_x - 1)! a_b! / (a_x + a_b)! to each row-feature and
// -v a_x! (a_b - 1)! / (a_x + a_b)! to each background-feature. Cost is O(leaves * depth) per
// pair. Background rows with identical branch patterns are merged and
// weighted by their multiplicity.
//
// Not thread-safe: holds recursion scratch space. Use one per thread.
class TreeExplainer {
 public:
  TreeExplainer(const Tree& tree, const Dataset& background);

  Explanation Explain(std::span<const double> row) const;

  // Mean |phi_j| over the rows of `eval`, then L2-normalized. Rows with the
  // same branch pattern share one attribution.
  ExplanationVector MeanAbsolute(const Dataset& eval,
                                 ExplanationAudit* audit = nullptr) const;

  double base_value() const { return base_value_; }

 private:
  using Pattern = std::vector<uint8_t>;

  Pattern BranchPattern(std::span<const double> row) const;
  void ExplainPattern(const Pattern& x_dir, std::vector<double>& phi) const;
  void Recurse(int node, const Pattern& x_dir, const Pattern& b_dir, int n_x,
               int n_b, double weight, std::vector<double>& phi) const;

  const Tree& tree_;
  std::vector<std::pair<Pattern, double>> background_patterns_;
  double total_weight_ = 0.0;
  double base_value_ = 0.0;
  std::vector<std::vector<double>> shapley_weight_;
  // Scratch state for the recursion: per-feature assignment (0 free,
  // 1 row, 2 background) and the stack of assigned features.
  mutable std::vector<uint8_t> state_;
  mutable std::vector<int> assigned_;
};

Explanation TreeShap(const Tree& tree, std::span<const double> row,
                     const Dataset& background);

// Definition-level Shapley values by enumerating every coalition of the
// tree's subset features (at most 12). Features outside the subset are null
// players. Used as the verification oracle.
Explanation BruteForceShapley(const Tree& tree, std::span<const double> row,
                              const Dataset& background);

ExplanationVector ComputeExplanationVector(const Tree& tree,
                                           const Dataset& eval,
                                           const Dataset& background);

// Seeded subsample (without replacement) of at most `cap` rows.
Dataset CapBackground(const Dataset& train, std::size_t cap, uint64_t seed);

inline constexpr std::size_t kDefaultBackgroundCap = 2000;

}  // namespace rashens

#endif  // RASHENS_EXPLAIN_H_
