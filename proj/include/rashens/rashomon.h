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

#ifndef RASHENS_RASHOMON_H_
#define RASHENS_RASHOMON_H_

#include <cstdint>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rashens/data.h"
#include "rashens/explain.h"
#include "rashens/metrics.h"
#include "rashens/tree.h"

namespace rashens {

// Probability that a subset drawn uniformly from all subsets with size in
// [key_size, max_size] contains a fixed key subset of size key_size:
//   sum_s C(F - K, s - K) / sum_s C(F, s).
// Evaluated with log-binomials so that large F does not overflow.
double SubsetInclusionProbability(int num_features, int key_size, int max_size);

// Smallest number of independent draws that contains the key subset at least
// once with probability alpha: ceil(ln(1 - alpha) / ln(1 - p)). Returns 1
// when p == 1; throws when p == 0.
int64_t RequiredSampleSizeFromProbability(double inclusion_probability,
                                          double alpha);
int64_t RequiredSampleSize(int num_features, int key_size, int max_size,
                           double alpha);

enum class SizeMode {
  kUniform,     // size uniform on [key_size, max_size] per draw
  kStratified,  // equal number of draws per size, sizes in round-robin order
};

struct SamplingPlan {
  int num_features = 0;
  int key_size = 1;
  int max_size = 1;
  double alpha = 0.95;
  int n_models = 1;
  uint64_t seed = 0;
  SizeMode size_mode = SizeMode::kUniform;

  void Validate() const;
};

nlohmann::json ToJson(const SamplingPlan& plan);
SamplingPlan SamplingPlanFromJson(const nlohmann::json& j);

// Draws plan.n_models subsets (with replacement at the subset level). Each
// draw picks its size, then that many distinct features uniformly.
std::vector<FeatureSubset> SampleCandidates(const SamplingPlan& plan);

struct CandidateModel {
  int id = 0;
  FeatureSubset subset;
  Tree tree;
  LossReport validation;
  double val_loss = 0.0;
  // Filled only for Rashomon members.
  ExplanationVector explanation;
};

enum class MembershipTest {
  kHardBand,  // val_loss <= ref_loss + epsilon
  kDeLong,    // hard band, or AUROC not significantly below the reference
};

struct ReferenceSpec {
  enum class Kind { kAllFeatures, kThreshold };
  Kind kind = Kind::kAllFeatures;
  // Loss used as the reference when kind == kThreshold (e.g. 1 - AUROC).
  double threshold_loss = 0.0;
  MembershipTest test = MembershipTest::kHardBand;
  double significance = 0.05;
};

nlohmann::json ToJson(const ReferenceSpec& ref);
ReferenceSpec ReferenceSpecFromJson(const nlohmann::json& j);

struct RashomonSet {
  double ref_loss = 0.0;
  double epsilon = 0.0;
  ReferenceSpec reference;
  std::vector<CandidateModel> members;
  int64_t n_sampled = 0;
  int64_t n_distinct_sampled = 0;

  bool Admits(double val_loss) const { return val_loss <= ref_loss + epsilon; }
};

// |members| / n_sampled.
double RashomonRatio(const RashomonSet& set);

struct RashomonInputs {
  const Dataset& train;
  const Dataset& validation;
  // Reference distribution for the Shapley values (see CapBackground).
  const Dataset& background;
  TreeParams params;
  // Optional; receives the checks of every explanation computed.
  ExplanationAudit* audit = nullptr;
};

// Trains every candidate on the training split, scores it on the validation
// split, and keeps those inside the band around the reference loss.
// Explanation vectors (over the validation split) are computed for members
// only. Candidates are processed in parallel and gathered by index.
RashomonSet BuildRashomonSet(const std::vector<FeatureSubset>& candidates,
                             const RashomonInputs& inputs,
                             const ReferenceSpec& reference, double epsilon);

// Reference loss of the configured reference model on the validation split.
double ReferenceLoss(const RashomonInputs& inputs, const ReferenceSpec& reference);

// One-sided DeLong test p-value for H1: AUROC(candidate) < AUROC(reference),
// both scored on the same rows.
double DeLongPValue(std::span<const double> candidate_scores,
                    std::span<const double> reference_scores,
                    std::span<const double> labels);

// Directory layout: manifest.json, models/<id>.json, explanations.csv.
void SaveRashomonSet(const RashomonSet& set, const SamplingPlan& plan,
                     const FeatureSchema& schema, const std::filesystem::path& dir);
RashomonSet LoadRashomonSet(const std::filesystem::path& dir);

nlohmann::json ToJson(const CandidateModel& model);
CandidateModel CandidateModelFromJson(const nlohmann::json& j);

}  // namespace rashens

#endif  // RASHENS_RASHOMON_H_
