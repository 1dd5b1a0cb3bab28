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

#include "rashens/rashomon.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>

#include <tbb/parallel_for.h>

#include "rashens/common.h"

namespace rashens {
namespace {

constexpr const char* kStage = "rashomon";

double LogBinomial(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

double LogSumExp(const std::vector<double>& terms) {
  const double m = *std::max_element(terms.begin(), terms.end());
  double s = 0;
  for (double t : terms) s += std::exp(t - m);
  return m + std::log(s);
}

double NormalCdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

struct CandidateResult {
  Tree tree;
  LossReport validation;
  bool member = false;
  ExplanationVector explanation;
  ExplanationAudit audit;
};

}  // namespace

double SubsetInclusionProbability(int num_features, int key_size, int max_size) {
  if (key_size < 0 || key_size > max_size || max_size > num_features) {
    throw Error(kStage, "need 0 <= key_size <= max_size <= num_features");
  }
  if (key_size == 0) return 1.0;
  std::vector<double> num, den;
  for (int s = key_size; s <= max_size; ++s) {
    num.push_back(LogBinomial(num_features - key_size, s - key_size));
    den.push_back(LogBinomial(num_features, s));
  }
  return std::min(1.0, std::exp(LogSumExp(num) - LogSumExp(den)));
}

int64_t RequiredSampleSizeFromProbability(double inclusion_probability,
                                          double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(kStage, "alpha must lie in (0, 1)");
  if (!(inclusion_probability >= 0.0 && inclusion_probability <= 1.0)) {
    throw Error(kStage, "inclusion probability must lie in [0, 1]");
  }
  if (inclusion_probability == 1.0) return 1;
  if (inclusion_probability == 0.0) {
    throw Error(kStage, "key subspace is unreachable (inclusion probability 0)");
  }
  const double eta = std::log1p(-alpha) / std::log1p(-inclusion_probability);
  return std::max<int64_t>(1, static_cast<int64_t>(std::ceil(eta)));
}

int64_t RequiredSampleSize(int num_features, int key_size, int max_size,
                           double alpha) {
  return RequiredSampleSizeFromProbability(
      SubsetInclusionProbability(num_features, key_size, max_size), alpha);
}

void SamplingPlan::Validate() const {
  if (!(1 <= key_size && key_size <= max_size && max_size <= num_features)) {
    throw Error(kStage, "sampling plan needs 1 <= key_size <= max_size <= F (got K=" +
                            std::to_string(key_size) + ", S_max=" +
                            std::to_string(max_size) + ", F=" +
                            std::to_string(num_features) + ")");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(kStage, "alpha must lie in (0, 1)");
  if (n_models < 1) throw Error(kStage, "n_models must be >= 1");
}

nlohmann::json ToJson(const SamplingPlan& plan) {
  return {{"num_features", plan.num_features},
          {"key_size", plan.key_size},
          {"max_size", plan.max_size},
          {"alpha", plan.alpha},
          {"n_models", plan.n_models},
          {"seed", plan.seed},
          {"size_mode", plan.size_mode == SizeMode::kUniform ? "uniform" : "stratified"}};
}

SamplingPlan SamplingPlanFromJson(const nlohmann::json& j) {
  SamplingPlan p;
  p.num_features = j.value("num_features", 0);
  p.key_size = j.value("key_size", p.key_size);
  p.max_size = j.value("max_size", p.max_size);
  p.alpha = j.value("alpha", p.alpha);
  p.n_models = j.value("n_models", p.n_models);
  p.seed = j.value("seed", p.seed);
  const std::string mode = j.value("size_mode", std::string("uniform"));
  if (mode == "uniform") {
    p.size_mode = SizeMode::kUniform;
  } else if (mode == "stratified") {
    p.size_mode = SizeMode::kStratified;
  } else {
    throw Error(kStage, "unknown size_mode '" + mode + "'");
  }
  return p;
}

std::vector<FeatureSubset> SampleCandidates(const SamplingPlan& plan) {
  plan.Validate();
  std::mt19937_64 rng(plan.seed);
  std::uniform_int_distribution<int> size_dist(plan.key_size, plan.max_size);
  const int num_sizes = plan.max_size - plan.key_size + 1;
  std::vector<int> pool(plan.num_features);
  std::vector<FeatureSubset> out;
  out.reserve(plan.n_models);
  for (int i = 0; i < plan.n_models; ++i) {
    const int size = plan.size_mode == SizeMode::kUniform
                         ? size_dist(rng)
                         : plan.key_size + i % num_sizes;
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: the first `size` slots are a uniform draw
    // without replacement.
    for (int k = 0; k < size; ++k) {
      std::uniform_int_distribution<int> pick(k, plan.num_features - 1);
      std::swap(pool[k], pool[pick(rng)]);
    }
    out.emplace_back(std::vector<int>(pool.begin(), pool.begin() + size));
  }
  return out;
}

nlohmann::json ToJson(const ReferenceSpec& ref) {
  return {{"kind", ref.kind == ReferenceSpec::Kind::kAllFeatures ? "all-features"
                                                                 : "threshold"},
          {"threshold_loss", ref.threshold_loss},
          {"test", ref.test == MembershipTest::kHardBand ? "hard-band" : "delong"},
          {"significance", ref.significance}};
}

ReferenceSpec ReferenceSpecFromJson(const nlohmann::json& j) {
  ReferenceSpec r;
  const std::string kind = j.value("kind", std::string("all-features"));
  if (kind == "all-features") {
    r.kind = ReferenceSpec::Kind::kAllFeatures;
  } else if (kind == "threshold") {
    r.kind = ReferenceSpec::Kind::kThreshold;
  } else {
    throw Error(kStage, "unknown reference kind '" + kind + "'");
  }
  r.threshold_loss = j.value("threshold_loss", 0.0);
  const std::string test = j.value("test", std::string("hard-band"));
  if (test == "hard-band") {
    r.test = MembershipTest::kHardBand;
  } else if (test == "delong") {
    r.test = MembershipTest::kDeLong;
  } else {
    throw Error(kStage, "unknown membership test '" + test + "'");
  }
  r.significance = j.value("significance", r.significance);
  return r;
}

double RashomonRatio(const RashomonSet& set) {
  if (set.n_sampled <= 0) throw Error(kStage, "no candidates were sampled");
  return static_cast<double>(set.members.size()) /
         static_cast<double>(set.n_sampled);
}

double DeLongPValue(std::span<const double> candidate_scores,
                    std::span<const double> reference_scores,
                    std::span<const double> labels) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    (labels[i] == 1.0 ? pos : neg).push_back(i);
  }
  if (pos.empty() || neg.empty()) throw Error(kStage, "DeLong test needs both classes");
  const double m = static_cast<double>(pos.size());
  const double n = static_cast<double>(neg.size());
  const auto psi = [](double a, double b) { return a > b ? 1.0 : (a == b ? 0.5 : 0.0); };

  const std::span<const double> scores[2] = {candidate_scores, reference_scores};
  std::vector<double> v10[2], v01[2];
  double auc[2] = {0, 0};
  for (int k = 0; k < 2; ++k) {
    v10[k].assign(pos.size(), 0.0);
    v01[k].assign(neg.size(), 0.0);
    for (std::size_t i = 0; i < pos.size(); ++i) {
      for (std::size_t j = 0; j < neg.size(); ++j) {
        const double s = psi(scores[k][pos[i]], scores[k][neg[j]]);
        v10[k][i] += s;
        v01[k][j] += s;
      }
    }
    for (double& v : v10[k]) v /= n;
    for (double& v : v01[k]) v /= m;
    auc[k] = std::accumulate(v10[k].begin(), v10[k].end(), 0.0) / m;
  }
  const auto cov = [](const std::vector<double>& a, const std::vector<double>& b,
                      double ma, double mb) {
    double c = 0;
    for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - ma) * (b[i] - mb);
    return a.size() > 1 ? c / static_cast<double>(a.size() - 1) : 0.0;
  };
  const double s10 = cov(v10[0], v10[0], auc[0], auc[0]) +
                     cov(v10[1], v10[1], auc[1], auc[1]) -
                     2 * cov(v10[0], v10[1], auc[0], auc[1]);
  const double s01 = cov(v01[0], v01[0], auc[0], auc[0]) +
                     cov(v01[1], v01[1], auc[1], auc[1]) -
                     2 * cov(v01[0], v01[1], auc[0], auc[1]);
  const double var = s10 / m + s01 / n;
  const double diff = auc[0] - auc[1];
  if (!(var > 0)) return diff < 0 ? 0.0 : 1.0;
  return NormalCdf(diff / std::sqrt(var));
}

double ReferenceLoss(const RashomonInputs& inputs, const ReferenceSpec& reference) {
  if (reference.kind == ReferenceSpec::Kind::kThreshold) return reference.threshold_loss;
  std::vector<int> all(inputs.train.cols());
  std::iota(all.begin(), all.end(), 0);
  const Tree ref = FitTree(inputs.train, FeatureSubset(all), inputs.params);
  return Evaluate(ref, inputs.validation).loss;
}

RashomonSet BuildRashomonSet(const std::vector<FeatureSubset>& candidates,
                             const RashomonInputs& inputs,
                             const ReferenceSpec& reference, double epsilon) {
  if (!(epsilon >= 0.0)) throw Error(kStage, "epsilon must be non-negative");
  if (inputs.train.empty() || inputs.validation.empty()) {
    throw Error(kStage, "training and validation splits must be non-empty");
  }

  RashomonSet set;
  set.epsilon = epsilon;
  set.reference = reference;
  set.n_sampled = static_cast<int64_t>(candidates.size());

  std::vector<double> reference_scores;
  if (reference.kind == ReferenceSpec::Kind::kAllFeatures) {
    std::vector<int> all(inputs.train.cols());
    std::iota(all.begin(), all.end(), 0);
    const Tree ref = FitTree(inputs.train, FeatureSubset(all), inputs.params);
    reference_scores = ref.PredictAll(inputs.validation);
    set.ref_loss = EvaluatePredictions(reference_scores, inputs.validation).loss;
  } else {
    set.ref_loss = reference.threshold_loss;
  }
  const bool delong = reference.test == MembershipTest::kDeLong &&
                      inputs.validation.task() == TaskKind::kBinaryClassification &&
                      !reference_scores.empty();

  // Identical subsets give identical trees: evaluate each distinct subset once.
  std::map<FeatureSubset, std::size_t> distinct_index;
  std::vector<const FeatureSubset*> distinct;
  std::vector<std::size_t> slot(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto [it, inserted] = distinct_index.emplace(candidates[i], distinct.size());
    if (inserted) distinct.push_back(&candidates[i]);
    slot[i] = it->second;
  }
  set.n_distinct_sampled = static_cast<int64_t>(distinct.size());

  std::vector<CandidateResult> results(distinct.size());
  tbb::parallel_for(std::size_t{0}, distinct.size(), [&](std::size_t k) {
    CandidateResult& r = results[k];
    r.tree = FitTree(inputs.train, *distinct[k], inputs.params);
    const auto preds = r.tree.PredictAll(inputs.validation);
    r.validation = EvaluatePredictions(preds, inputs.validation);
    r.member = set.Admits(r.validation.loss);
    if (!r.member && delong) {
      r.member = DeLongPValue(preds, reference_scores, inputs.validation.labels()) >=
                 reference.significance;
    }
    if (r.member) {
      r.explanation = TreeExplainer(r.tree, inputs.background)
                          .MeanAbsolute(inputs.validation, &r.audit);
    }
  });

  if (inputs.audit != nullptr) {
    for (const CandidateResult& r : results) inputs.audit->Merge(r.audit);
  }
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const CandidateResult& r = results[slot[i]];
    if (!r.member) continue;
    CandidateModel m;
    m.id = static_cast<int>(i);
    m.subset = candidates[i];
    m.tree = r.tree;
    m.validation = r.validation;
    m.val_loss = r.validation.loss;
    m.explanation = r.explanation;
    set.members.push_back(std::move(m));
  }
  return set;
}

nlohmann::json ToJson(const CandidateModel& model) {
  return {{"id", model.id},
          {"subset", ToJson(model.subset)},
          {"val_loss", model.val_loss},
          {"val_auroc", model.validation.auroc},
          {"val_accuracy", model.validation.accuracy},
          {"val_mape", model.validation.mape},
          {"explanation", model.explanation.values},
          {"tree", ToJson(model.tree)}};
}

CandidateModel CandidateModelFromJson(const nlohmann::json& j) {
  CandidateModel m;
  m.id = j.at("id").get<int>();
  m.subset = FeatureSubsetFromJson(j.at("subset"));
  m.tree = TreeFromJson(j.at("tree"));
  m.val_loss = j.at("val_loss").get<double>();
  m.validation.loss = m.val_loss;
  m.validation.auroc = j.value("val_auroc", 0.0);
  m.validation.accuracy = j.value("val_accuracy", 0.0);
  m.validation.mape = j.value("val_mape", 0.0);
  m.explanation.values = j.value("explanation", std::vector<double>{});
  return m;
}

void SaveRashomonSet(const RashomonSet& set, const SamplingPlan& plan,
                     const FeatureSchema& schema, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"plan", ToJson(plan)},
      {"reference", ToJson(set.reference)},
      {"ref_loss", set.ref_loss},
      {"epsilon", set.epsilon},
      {"n_sampled", set.n_sampled},
      {"n_distinct_sampled", set.n_distinct_sampled},
      {"n_members", set.members.size()},
      {"ratio", set.n_sampled > 0 ? RashomonRatio(set) : 0.0},
      {"features", schema.names()}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';

  std::ofstream models(dir / "models.jsonl");
  std::ofstream csv(dir / "explanations.csv");
  if (!models || !csv) throw Error(kStage, "cannot write to " + dir.string());
  csv << "model_id";
  for (const auto& n : schema.names()) csv << ',' << n;
  csv << '\n';
  for (const CandidateModel& m : set.members) {
    models << ToJson(m).dump() << '\n';
    csv << m.id;
    for (double v : m.explanation.values) csv << ',' << FormatDouble(v);
    csv << '\n';
  }
}

RashomonSet LoadRashomonSet(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw Error(kStage, "missing " + (dir / "manifest.json").string());
  const auto manifest = nlohmann::json::parse(in);
  RashomonSet set;
  set.ref_loss = manifest.at("ref_loss").get<double>();
  set.epsilon = manifest.at("epsilon").get<double>();
  set.reference = ReferenceSpecFromJson(manifest.at("reference"));
  set.n_sampled = manifest.at("n_sampled").get<int64_t>();
  set.n_distinct_sampled = manifest.value("n_distinct_sampled", int64_t{0});

  std::ifstream models(dir / "models.jsonl");
  if (!models) throw Error(kStage, "missing " + (dir / "models.jsonl").string());
  std::string line;
  while (std::getline(models, line)) {
    if (!line.empty()) set.members.push_back(CandidateModelFromJson(nlohmann::json::parse(line)));
  }
  if (set.members.size() != manifest.at("n_members").get<std::size_t>()) {
    throw Error(kStage, "models.jsonl does not match the manifest member count");
  }
  return set;
}

}  // namespace rashens
