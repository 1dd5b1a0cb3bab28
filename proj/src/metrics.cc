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

#include "rashens/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rashens/common.h"

namespace rashens {

std::vector<double> AverageRanks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return values[a] < values[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
    i = j + 1;
  }
  return ranks;
}

double Auroc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) {
    throw Error("metrics", "AUROC: score and label counts differ");
  }
  double n_pos = 0;
  for (double y : labels) n_pos += (y == 1.0);
  const double n_neg = static_cast<double>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw Error("metrics", "AUROC requires both classes to be present");
  }
  const auto ranks = AverageRanks(scores);
  double rank_sum = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1.0) rank_sum += ranks[i];
  }
  return (rank_sum - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg);
}

double Mape(std::span<const double> predictions,
            std::span<const double> actuals) {
  if (predictions.size() != actuals.size() || actuals.empty()) {
    throw Error("metrics", "MAPE: prediction and actual counts differ");
  }
  double total = 0;
  for (std::size_t i = 0; i < actuals.size(); ++i) {
    if (actuals[i] == 0.0) {
      throw Error("metrics", "MAPE undefined: an actual value is zero");
    }
    total += std::abs(predictions[i] - actuals[i]) / std::abs(actuals[i]);
  }
  return total / static_cast<double>(actuals.size());
}

double Accuracy(std::span<const double> scores, std::span<const double> labels,
                double threshold) {
  if (scores.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    correct += ((scores[i] >= threshold ? 1.0 : 0.0) == labels[i]);
  }
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

double SpearmanCorrelation(std::span<const double> x,
                           std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error("metrics", "Spearman correlation needs two equal-length series");
  }
  const auto rx = AverageRanks(x);
  const auto ry = AverageRanks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

LossReport EvaluatePredictions(std::span<const double> predictions,
                               const Dataset& dataset) {
  if (dataset.empty()) throw Error("metrics", "cannot evaluate on empty data");
  LossReport r;
  if (dataset.task() == TaskKind::kBinaryClassification) {
    r.auroc = Auroc(predictions, dataset.labels());
    r.accuracy = Accuracy(predictions, dataset.labels());
    r.loss = 1.0 - r.auroc;
  } else {
    r.mape = Mape(predictions, dataset.labels());
    r.loss = r.mape;
  }
  return r;
}

}  // namespace rashens
