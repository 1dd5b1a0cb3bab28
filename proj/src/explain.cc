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

#include "rashens/explain.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <random>

#include "rashens/common.h"

namespace rashens {
namespace {

constexpr const char* kStage = "explain";
constexpr int kMaxBruteForceFeatures = 12;

}  // namespace

bool ExplanationVector::IsZero() const {
  return std::all_of(values.begin(), values.end(),
                     [](double v) { return v == 0.0; });
}

TreeExplainer::TreeExplainer(const Tree& tree, const Dataset& background)
    : tree_(tree) {
  if (background.empty()) throw Error(kStage, "background dataset is empty");
  if (background.cols() != tree.num_features()) {
    throw Error(kStage, "background dimension does not match tree");
  }
  std::map<Pattern, double> merged;
  for (std::size_t i = 0; i < background.rows(); ++i) {
    merged[BranchPattern(background.row(i))] += 1.0;
  }
  background_patterns_.assign(merged.begin(), merged.end());
  total_weight_ = static_cast<double>(background.rows());

  double base = 0;
  for (std::size_t i = 0; i < background.rows(); ++i) {
    base += tree.Predict(background.row(i));
  }
  base_value_ = base / total_weight_;

  // shapley_weight_[a][b] = a! b! / (a + b + 1)!
  const int depth = tree.Depth() + 1;
  shapley_weight_.assign(depth + 1, std::vector<double>(depth + 1, 0.0));
  for (int a = 0; a <= depth; ++a) {
    for (int b = 0; b <= depth; ++b) {
      shapley_weight_[a][b] = std::exp(std::lgamma(a + 1.0) + std::lgamma(b + 1.0) -
                                       std::lgamma(a + b + 2.0));
    }
  }
  state_.assign(tree.num_features(), 0);
}

TreeExplainer::Pattern TreeExplainer::BranchPattern(
    std::span<const double> row) const {
  const auto& nodes = tree_.nodes();
  Pattern p(nodes.size(), 0);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (!nodes[i].is_leaf()) {
      p[i] = row[nodes[i].feature] <= nodes[i].threshold ? 0 : 1;
    }
  }
  return p;
}

void TreeExplainer::Recurse(int node, const Pattern& x_dir, const Pattern& b_dir,
                            int n_x, int n_b, double weight,
                            std::vector<double>& phi) const {
  const TreeNode& n = tree_.nodes()[node];
  if (n.is_leaf()) {
    if (n_x + n_b == 0) return;
    const double v = n.value * weight;
    const double w_pos = n_x > 0 ? shapley_weight_[n_x - 1][n_b] : 0.0;
    const double w_neg = n_b > 0 ? shapley_weight_[n_x][n_b - 1] : 0.0;
    for (int f : assigned_) {
      if (state_[f] == 1) {
        phi[f] += v * w_pos;
      } else {
        phi[f] -= v * w_neg;
      }
    }
    return;
  }
  const int f = n.feature;
  const auto child = [&](uint8_t dir) { return dir ? n.right : n.left; };
  if (state_[f] == 1) {
    Recurse(child(x_dir[node]), x_dir, b_dir, n_x, n_b, weight, phi);
  } else if (state_[f] == 2) {
    Recurse(child(b_dir[node]), x_dir, b_dir, n_x, n_b, weight, phi);
  } else if (x_dir[node] == b_dir[node]) {
    Recurse(child(x_dir[node]), x_dir, b_dir, n_x, n_b, weight, phi);
  } else {
    assigned_.push_back(f);
    state_[f] = 1;
    Recurse(child(x_dir[node]), x_dir, b_dir, n_x + 1, n_b, weight, phi);
    state_[f] = 2;
    Recurse(child(b_dir[node]), x_dir, b_dir, n_x, n_b + 1, weight, phi);
    state_[f] = 0;
    assigned_.pop_back();
  }
}

void TreeExplainer::ExplainPattern(const Pattern& x_dir,
                                   std::vector<double>& phi) const {
  for (const auto& [b_dir, count] : background_patterns_) {
    Recurse(0, x_dir, b_dir, 0, 0, count / total_weight_, phi);
  }
}

Explanation TreeExplainer::Explain(std::span<const double> row) const {
  if (row.size() != tree_.num_features()) {
    throw Error(kStage, "row dimension does not match tree");
  }
  Explanation e;
  e.phi.assign(tree_.num_features(), 0.0);
  e.base_value = base_value_;
  ExplainPattern(BranchPattern(row), e.phi);
  return e;
}

ExplanationVector TreeExplainer::MeanAbsolute(const Dataset& eval,
                                              ExplanationAudit* audit) const {
  if (eval.empty()) throw Error(kStage, "evaluation dataset is empty");
  // Pattern -> (row count, first row with that pattern).
  std::map<Pattern, std::pair<double, std::size_t>> rows;
  for (std::size_t i = 0; i < eval.rows(); ++i) {
    auto [it, inserted] = rows.try_emplace(BranchPattern(eval.row(i)), 0.0, i);
    it->second.first += 1.0;
  }
  const std::size_t d = tree_.num_features();
  std::vector<bool> used(d, false);
  for (const TreeNode& n : tree_.nodes()) {
    if (!n.is_leaf()) used[n.feature] = true;
  }
  ExplanationVector out;
  out.values.assign(d, 0.0);
  std::vector<double> phi(d);
  for (const auto& [x_dir, entry] : rows) {
    const auto [count, first] = entry;
    std::fill(phi.begin(), phi.end(), 0.0);
    ExplainPattern(x_dir, phi);
    for (int f : tree_.subset().indices()) out.values[f] += count * std::abs(phi[f]);
    if (audit != nullptr) {
      double total = base_value_;
      for (std::size_t j = 0; j < d; ++j) {
        total += phi[j];
        if (!used[j] && phi[j] != 0.0) audit->missingness_violations += static_cast<int64_t>(count);
      }
      audit->max_local_accuracy_error =
          std::max(audit->max_local_accuracy_error, std::abs(total - tree_.Predict(eval.row(first))));
      audit->explanations += static_cast<int64_t>(count);
    }
  }
  double norm = 0;
  for (double& v : out.values) {
    v /= static_cast<double>(eval.rows());
    norm += v * v;
  }
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& v : out.values) v /= norm;
  }
  return out;
}

void ExplanationAudit::Merge(const ExplanationAudit& other) {
  explanations += other.explanations;
  missingness_violations += other.missingness_violations;
  max_local_accuracy_error = std::max(max_local_accuracy_error, other.max_local_accuracy_error);
}

Explanation TreeShap(const Tree& tree, std::span<const double> row,
                     const Dataset& background) {
  return TreeExplainer(tree, background).Explain(row);
}

Explanation BruteForceShapley(const Tree& tree, std::span<const double> row,
                              const Dataset& background) {
  const auto& features = tree.subset().indices();
  const int n = static_cast<int>(features.size());
  if (n > kMaxBruteForceFeatures) {
    throw Error(kStage, "brute-force Shapley supports at most 12 subset features");
  }
  if (background.empty()) throw Error(kStage, "background dataset is empty");
  if (row.size() != tree.num_features()) {
    throw Error(kStage, "row dimension does not match tree");
  }

  const std::size_t coalitions = std::size_t{1} << n;
  std::vector<double> value(coalitions, 0.0);
  std::vector<double> z(row.size());
  for (std::size_t mask = 0; mask < coalitions; ++mask) {
    double total = 0;
    for (std::size_t b = 0; b < background.rows(); ++b) {
      const auto bg = background.row(b);
      std::copy(bg.begin(), bg.end(), z.begin());
      for (int k = 0; k < n; ++k) {
        if (mask >> k & 1) z[features[k]] = row[features[k]];
      }
      total += tree.Predict(z);
    }
    value[mask] = total / static_cast<double>(background.rows());
  }

  // weight[s] = s! (n - s - 1)! / n!
  std::vector<double> weight(n, 0.0);
  for (int s = 0; s < n; ++s) {
    weight[s] = std::exp(std::lgamma(s + 1.0) + std::lgamma(n - s + 0.0) -
                         std::lgamma(n + 1.0));
  }
  Explanation e;
  e.phi.assign(tree.num_features(), 0.0);
  e.base_value = value[0];
  for (int k = 0; k < n; ++k) {
    double phi = 0;
    for (std::size_t mask = 0; mask < coalitions; ++mask) {
      if (mask >> k & 1) continue;
      const int s = std::popcount(mask);
      phi += weight[s] * (value[mask | (std::size_t{1} << k)] - value[mask]);
    }
    e.phi[features[k]] = phi;
  }
  return e;
}

ExplanationVector ComputeExplanationVector(const Tree& tree,
                                           const Dataset& eval,
                                           const Dataset& background) {
  return TreeExplainer(tree, background).MeanAbsolute(eval);
}

Dataset CapBackground(const Dataset& train, std::size_t cap, uint64_t seed) {
  if (train.rows() <= cap) return train;
  std::vector<std::size_t> idx(train.rows());
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(cap);
  std::sort(idx.begin(), idx.end());
  return train.SelectRows(idx);
}

}  // namespace rashens
