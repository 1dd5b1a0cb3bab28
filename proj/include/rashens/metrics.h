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

#ifndef RASHENS_METRICS_H_
#define RASHENS_METRICS_H_

#include <span>
#include <vector>

#include "rashens/data.h"

namespace rashens {

// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
// (positive, negative) pairs ranked correctly, ties counting one half.
// Throws when either class is absent.
double Auroc(std::span<const double> scores, std::span<const double> labels);

// Mean of |pred - actual| / |actual|. Throws when any actual is zero.
double Mape(std::span<const double> predictions, std::span<const double> actuals);

// Fraction of rows where (score >= threshold) equals the label.
double Accuracy(std::span<const double> scores, std::span<const double> labels,
                double threshold = 0.5);

// Spearman rank correlation with average ranks for ties.
double SpearmanCorrelation(std::span<const double> x, std::span<const double> y);

// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> AverageRanks(std::span<const double> values);

struct LossReport {
  double loss = 0.0;      // 1 - AUROC (classification) or MAPE (regression)
  double auroc = 0.0;     // classification only
  double accuracy = 0.0;  // classification only
  double mape = 0.0;      // regression only
};

// Scores a vector of model outputs against a labeled dataset using the
// metric matching the dataset's task.
LossReport EvaluatePredictions(std::span<const double> predictions,
                               const Dataset& dataset);

}  // namespace rashens

#endif  // RASHENS_METRICS_H_
