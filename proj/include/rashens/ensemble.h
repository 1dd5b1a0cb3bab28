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

#ifndef RASHENS_ENSEMBLE_H_
#define RASHENS_ENSEMBLE_H_

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "rashens/data.h"
#include "rashens/explain.h"
#include "rashens/rashomon.h"
#include "rashens/tree.h"

namespace rashens {

// Jensen-Shannon distance with base-2 logarithms, so the result is in [0, 1].
// Both inputs must sum to 1 within 1e-9.
double Jsd(std::span<const double> p, std::span<const double> q);

// Jsd([1 - p, p], [1 - q, q]) without the normalization check.
double BernoulliJsd(double p, double q);

// Mean over rows of BernoulliJsd between two prediction vectors.
double MeanBernoulliJsd(std::span<const double> a, std::span<const double> b);

// Symmetric matrix of MeanBernoulliJsd over per-model prediction vectors.
std::vector<std::vector<double>> PairwiseJsd(
    const std::vector<std::vector<double>>& predictions);
std::vector<std::vector<double>> PairwiseJsd(const std::vector<const Tree*>& models,
                                             const Dataset& dataset);

// Mean of the strict upper triangle; 0 for fewer than two models.
double MeanOffDiagonal(const std::vector<std::vector<double>>& matrix);

// Population standard deviation over mean. Throws when |mean| < 1e-12.
double CoefficientOfVariation(std::span<const double> values);

enum class CombinerKind { kVoting, kStacking };

struct StackingWeights {
  std::vector<double> weights;
  double intercept = 0.0;
  // Constituent probabilities are clipped to [clip, 1 - clip] before logits.
  double clip = 1e-3;
};

struct Ensemble {
  std::vector<CandidateModel> constituents;
  CombinerKind combiner = CombinerKind::kVoting;
  StackingWeights stacking;
  TaskKind task = TaskKind::kBinaryClassification;
  double vote_threshold = 0.5;

  void Validate() const;
};

struct AgreementReport {
  std::vector<double> outputs;
  // Positive-vote fraction (classification).
  double voting_ratio = 0.0;
  // Coefficient of variation of the outputs (regression).
  double c_v = 0.0;
  // Mean BernoulliJsd over constituent pairs (classification).
  double mean_jsd = 0.0;
};

struct VotingPrediction {
  double prediction = 0.0;
  AgreementReport agreement;
};

// Classification: each constituent votes output >= vote_threshold and the
// prediction is the positive-vote fraction. Regression: the mean output.
VotingPrediction PredictVoting(const Ensemble& ensemble, std::span<const double> row);

// One vector per constituent.
std::vector<std::vector<double>> ConstituentPredictions(const Ensemble& ensemble,
                                                        const Dataset& dataset);

// Ensemble output per row under the ensemble's combiner.
std::vector<double> PredictAll(const Ensemble& ensemble, const Dataset& dataset);

struct StackingOptions {
  int folds = 5;
  double l2 = 1e-3;
  int iterations = 500;
  double clip = 1e-3;
};

// Logistic combiner over constituent logits, fit by full-batch gradient
// descent on out-of-fold constituent outputs. Fold trees reuse each
// constituent's feature subset and `params`; the returned ensemble keeps the
// constituents' own trees.
Ensemble FitStacking(const std::vector<CandidateModel>& constituents,
                     const Dataset& train, const TreeParams& params, uint64_t seed,
                     const StackingOptions& options = {});

struct RiskBucket {
  double lower = 0.0;
  double upper = 0.0;
  int count = 0;
  int correct = 0;
  // NaN for empty buckets.
  double accuracy = 0.0;
};

// Rows bucketed by agreement max(r, 1 - r) of the voting ratio r into
// `bins` equal-width buckets over [0.5, 1]; each bucket is closed below.
// The majority vote counts a tie (r = 0.5) as positive.
std::vector<RiskBucket> RiskStratify(const Ensemble& ensemble, const Dataset& dataset,
                                     int bins);

// Lowest and highest non-empty buckets.
std::pair<const RiskBucket*, const RiskBucket*> ExtremeBuckets(
    const std::vector<RiskBucket>& buckets);

struct DriftRow {
  double level = 0.0;
  double loss_mean = 0.0, loss_std = 0.0;
  double jsd_mean = 0.0, jsd_std = 0.0;
  double agreement_mean = 0.0, agreement_std = 0.0;
  double accuracy_mean = 0.0, accuracy_std = 0.0;
};

struct DriftReport {
  PerturbationKind kind = PerturbationKind::kGaussian;
  int repeats = 0;
  std::vector<DriftRow> rows;
};

// For each level (sigma^2 or shuffled fraction) and repeat: perturb the test
// set, then record ensemble loss and accuracy, the mean pairwise JSD among
// constituents and the mean agreement. Rows hold mean and population std
// over repeats. Levels must be strictly increasing.
DriftReport DriftExperiment(const Ensemble& ensemble, const Dataset& test,
                            const std::vector<double>& levels, PerturbationKind kind,
                            uint64_t seed, int repeats = 30);

struct SimilarityReport {
  double jaccard = 0.0;
  double shap_cosine = 0.0;
};

// Jaccard index of the rows each model labels positive (1 when neither
// does), and cosine similarity between the mean constituent explanation
// vector and the reference's.
SimilarityReport CompareToReference(const Ensemble& ensemble, const Tree& reference,
                                    const ExplanationVector& reference_explanation,
                                    const Dataset& dataset);

double CosineSimilarity(std::span<const double> a, std::span<const double> b);
double Jaccard(const std::vector<bool>& a, const std::vector<bool>& b);

nlohmann::json ToJson(const Ensemble& ensemble);
Ensemble EnsembleFromJson(const nlohmann::json& j);
nlohmann::json ToJson(const std::vector<RiskBucket>& buckets);
nlohmann::json ToJson(const DriftReport& report);

void WriteDriftCsv(const std::filesystem::path& path, const DriftReport& report);
// Whitespace-separated columns with a '#' header line, for gnuplot.
void WriteDriftGnuplot(const std::filesystem::path& path, const DriftReport& report);
void WriteRiskCsv(const std::filesystem::path& path, const std::vector<RiskBucket>& buckets);

}  // namespace rashens

#endif  // RASHENS_ENSEMBLE_H_
