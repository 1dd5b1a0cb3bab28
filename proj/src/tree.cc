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

#include "rashens/tree.h"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>

#include "rashens/common.h"

namespace rashens {
namespace {

constexpr const char* kStage = "tree";

// Split quality as an exact fraction num / den so that ties between
// candidate splits are detected without rounding noise (classification).
struct Fraction {
  unsigned __int128 num = 0;
  unsigned __int128 den = 1;

  bool GreaterThan(const Fraction& o) const {
    return num * o.den > o.num * den;
  }
};

struct SplitChoice {
  int feature = -1;
  double threshold = 0.0;
  Fraction gini_score;
  double variance_score = -1.0;
};

class Builder {
 public:
  Builder(const Dataset& ds, const FeatureSubset& subset,
          const TreeParams& params)
      : ds_(ds), subset_(subset), params_(params), y_(ds.labels()) {}

  std::vector<TreeNode> Run() {
    const std::size_t n = ds_.rows();
    std::vector<std::vector<uint32_t>> sorted(subset_.size());
    for (std::size_t f = 0; f < subset_.size(); ++f) {
      const int feat = subset_.indices()[f];
      auto& idx = sorted[f];
      idx.resize(n);
      std::iota(idx.begin(), idx.end(), 0u);
      std::stable_sort(idx.begin(), idx.end(), [&](uint32_t a, uint32_t b) {
        return ds_.at(a, feat) < ds_.at(b, feat);
      });
    }
    go_left_.assign(n, 0);
    Build(std::move(sorted), 0);
    return std::move(nodes_);
  }

 private:
  bool classification() const {
    return params_.criterion == SplitCriterion::kGini;
  }

  int Build(std::vector<std::vector<uint32_t>> sorted, int depth) {
    const auto& samples = sorted.front();
    const std::size_t n = samples.size();
    double sum = 0;
    double min_y = y_[samples.front()];
    double max_y = min_y;
    for (uint32_t s : samples) {
      sum += y_[s];
      min_y = std::min(min_y, y_[s]);
      max_y = std::max(max_y, y_[s]);
    }
    const int id = static_cast<int>(nodes_.size());
    nodes_.push_back(TreeNode{});
    nodes_[id].count = static_cast<int>(n);
    nodes_[id].value = sum / static_cast<double>(n);

    const bool pure = min_y == max_y;
    if (pure || depth >= params_.max_depth ||
        n < 2 * static_cast<std::size_t>(params_.min_samples_leaf)) {
      return id;
    }
    const auto choice = FindBestSplit(sorted, sum);
    if (!choice) return id;

    for (uint32_t s : samples) {
      go_left_[s] = ds_.at(s, choice->feature) <= choice->threshold;
    }
    std::vector<std::vector<uint32_t>> left(sorted.size());
    std::vector<std::vector<uint32_t>> right(sorted.size());
    for (std::size_t f = 0; f < sorted.size(); ++f) {
      for (uint32_t s : sorted[f]) (go_left_[s] ? left[f] : right[f]).push_back(s);
    }
    sorted.clear();
    sorted.shrink_to_fit();

    nodes_[id].feature = choice->feature;
    nodes_[id].threshold = choice->threshold;
    const int l = Build(std::move(left), depth + 1);
    nodes_[id].left = l;
    const int r = Build(std::move(right), depth + 1);
    nodes_[id].right = r;
    return id;
  }

  std::optional<SplitChoice> FindBestSplit(
      const std::vector<std::vector<uint32_t>>& sorted, double total_sum) const {
    const std::size_t n = sorted.front().size();
    const auto min_leaf = static_cast<std::size_t>(params_.min_samples_leaf);
    const auto total_pos = static_cast<uint64_t>(std::llround(total_sum));
    std::optional<SplitChoice> best;

    for (std::size_t f = 0; f < sorted.size(); ++f) {
      const int feat = subset_.indices()[f];
      const auto& idx = sorted[f];
      uint64_t left_pos = 0;
      double left_sum = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        const double yi = y_[idx[i]];
        left_sum += yi;
        left_pos += (yi == 1.0);
        const double v = ds_.at(idx[i], feat);
        const double v_next = ds_.at(idx[i + 1], feat);
        if (!(v < v_next)) continue;
        const std::size_t nl = i + 1;
        const std::size_t nr = n - nl;
        if (nl < min_leaf || nr < min_leaf) continue;
        double threshold = v + (v_next - v) / 2;
        if (!(threshold < v_next) || threshold < v) threshold = v;

        SplitChoice cand;
        cand.feature = feat;
        cand.threshold = threshold;
        if (classification()) {
          // Maximize (aL^2 + bL^2)/nL + (aR^2 + bR^2)/nR, which is the
          // weighted Gini decrease up to a constant.
          const uint64_t al = left_pos, bl = nl - left_pos;
          const uint64_t ar = total_pos - left_pos, br = nr - ar;
          const unsigned __int128 sl = al * al + bl * bl;
          const unsigned __int128 sr = ar * ar + br * br;
          cand.gini_score.num = sl * nr + sr * nl;
          cand.gini_score.den = static_cast<unsigned __int128>(nl) * nr;
          if (!best || cand.gini_score.GreaterThan(best->gini_score)) {
            best = cand;
          }
        } else {
          // Maximize sL^2/nL + sR^2/nR (sum-of-squares decrease).
          const double right_sum = total_sum - left_sum;
          cand.variance_score = left_sum * left_sum / static_cast<double>(nl) +
                                right_sum * right_sum / static_cast<double>(nr);
          if (!best || cand.variance_score > best->variance_score) best = cand;
        }
      }
    }
    return best;
  }

  const Dataset& ds_;
  const FeatureSubset& subset_;
  const TreeParams& params_;
  const std::vector<double>& y_;
  std::vector<TreeNode> nodes_;
  std::vector<uint8_t> go_left_;
};

}  // namespace

FeatureSubset::FeatureSubset(std::vector<int> indices)
    : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end()) {
    throw Error(kStage, "feature subset has duplicate indices");
  }
  if (!indices_.empty() && indices_.front() < 0) {
    throw Error(kStage, "feature subset has a negative index");
  }
}

bool FeatureSubset::Contains(int feature) const {
  return std::binary_search(indices_.begin(), indices_.end(), feature);
}

FeatureSubset FeatureSubset::With(int feature) const {
  auto idx = indices_;
  idx.push_back(feature);
  return FeatureSubset(std::move(idx));
}

std::string FeatureSubset::Key() const {
  std::string key;
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (i) key.push_back('-');
    key += std::to_string(indices_[i]);
  }
  return key;
}

TreeParams TreeParams::ForTask(TaskKind task) {
  TreeParams p;
  p.criterion = task == TaskKind::kBinaryClassification ? SplitCriterion::kGini
                                                        : SplitCriterion::kVariance;
  return p;
}

void TreeParams::Validate() const {
  if (max_depth < 1) throw Error(kStage, "max_depth must be >= 1");
  if (min_samples_leaf < 1) throw Error(kStage, "min_samples_leaf must be >= 1");
}

Tree::Tree(std::vector<TreeNode> nodes, FeatureSubset subset, TreeParams params,
           std::size_t num_features)
    : nodes_(std::move(nodes)),
      subset_(std::move(subset)),
      params_(params),
      num_features_(num_features) {
  if (nodes_.empty()) throw Error(kStage, "tree has no nodes");
}

int Tree::LeafIndex(std::span<const double> row) const {
  int i = 0;
  while (!nodes_[i].is_leaf()) {
    const TreeNode& n = nodes_[i];
    i = row[n.feature] <= n.threshold ? n.left : n.right;
  }
  return i;
}

double Tree::Predict(std::span<const double> row) const {
  return nodes_[LeafIndex(row)].value;
}

std::vector<double> Tree::PredictAll(const Dataset& dataset) const {
  if (dataset.cols() != num_features_) {
    throw Error(kStage, "row dimension does not match tree");
  }
  std::vector<double> out(dataset.rows());
  for (std::size_t i = 0; i < dataset.rows(); ++i) out[i] = Predict(dataset.row(i));
  return out;
}

int Tree::Depth() const {
  std::vector<int> depth(nodes_.size(), 0);
  int max_depth = 0;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TreeNode& n = nodes_[i];
    max_depth = std::max(max_depth, depth[i]);
    if (!n.is_leaf()) {
      depth[n.left] = depth[i] + 1;
      depth[n.right] = depth[i] + 1;
    }
  }
  return max_depth;
}

bool Tree::operator==(const Tree& o) const {
  if (nodes_.size() != o.nodes_.size() || !(subset_ == o.subset_) ||
      num_features_ != o.num_features_ ||
      params_.max_depth != o.params_.max_depth ||
      params_.min_samples_leaf != o.params_.min_samples_leaf ||
      params_.criterion != o.params_.criterion) {
    return false;
  }
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const TreeNode& a = nodes_[i];
    const TreeNode& b = o.nodes_[i];
    if (a.feature != b.feature || a.threshold != b.threshold ||
        a.left != b.left || a.right != b.right || a.value != b.value ||
        a.count != b.count) {
      return false;
    }
  }
  return true;
}

Tree FitTree(const Dataset& dataset, const FeatureSubset& subset,
             const TreeParams& params) {
  params.Validate();
  if (dataset.empty()) throw Error(kStage, "cannot fit a tree on empty data");
  if (subset.empty()) throw Error(kStage, "feature subset is empty");
  if (subset.indices().back() >= static_cast<int>(dataset.cols())) {
    throw Error(kStage, "feature subset references out-of-range feature " +
                            std::to_string(subset.indices().back()));
  }
  if (params.criterion == SplitCriterion::kGini &&
      dataset.task() != TaskKind::kBinaryClassification) {
    throw Error(kStage, "gini criterion requires a classification dataset");
  }
  Builder builder(dataset, subset, params);
  return Tree(builder.Run(), subset, params, dataset.cols());
}

LossReport Evaluate(const Tree& tree, const Dataset& dataset) {
  const auto preds = tree.PredictAll(dataset);
  return EvaluatePredictions(preds, dataset);
}

nlohmann::json ToJson(const FeatureSubset& subset) { return subset.indices(); }

nlohmann::json ToJson(const TreeParams& params) {
  return {{"max_depth", params.max_depth},
          {"min_samples_leaf", params.min_samples_leaf},
          {"criterion",
           params.criterion == SplitCriterion::kGini ? "gini" : "variance"}};
}

nlohmann::json ToJson(const Tree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const TreeNode& n : tree.nodes()) {
    if (n.is_leaf()) {
      nodes.push_back({{"value", n.value}, {"count", n.count}});
    } else {
      nodes.push_back({{"feature", n.feature},
                       {"threshold", n.threshold},
                       {"left", n.left},
                       {"right", n.right},
                       {"value", n.value},
                       {"count", n.count}});
    }
  }
  return {{"num_features", tree.num_features()},
          {"subset", ToJson(tree.subset())},
          {"params", ToJson(tree.params())},
          {"nodes", std::move(nodes)}};
}

FeatureSubset FeatureSubsetFromJson(const nlohmann::json& j) {
  return FeatureSubset(j.get<std::vector<int>>());
}

TreeParams TreeParamsFromJson(const nlohmann::json& j) {
  TreeParams p;
  p.max_depth = j.value("max_depth", p.max_depth);
  p.min_samples_leaf = j.value("min_samples_leaf", p.min_samples_leaf);
  const std::string c = j.value("criterion", std::string("gini"));
  if (c == "gini") {
    p.criterion = SplitCriterion::kGini;
  } else if (c == "variance") {
    p.criterion = SplitCriterion::kVariance;
  } else {
    throw Error(kStage, "unknown split criterion '" + c + "'");
  }
  p.Validate();
  return p;
}

Tree TreeFromJson(const nlohmann::json& j) {
  std::vector<TreeNode> nodes;
  for (const auto& jn : j.at("nodes")) {
    TreeNode n;
    n.value = jn.at("value").get<double>();
    n.count = jn.at("count").get<int>();
    if (jn.contains("feature")) {
      n.feature = jn.at("feature").get<int>();
      n.threshold = jn.at("threshold").get<double>();
      n.left = jn.at("left").get<int>();
      n.right = jn.at("right").get<int>();
    }
    nodes.push_back(n);
  }
  const auto num_nodes = static_cast<int>(nodes.size());
  for (const TreeNode& n : nodes) {
    if (!n.is_leaf() && (n.left <= 0 || n.right <= 0 || n.left >= num_nodes ||
                         n.right >= num_nodes)) {
      throw Error(kStage, "tree JSON has an invalid child index");
    }
  }
  return Tree(std::move(nodes), FeatureSubsetFromJson(j.at("subset")),
              TreeParamsFromJson(j.at("params")),
              j.at("num_features").get<std::size_t>());
}

}  // namespace rashens
