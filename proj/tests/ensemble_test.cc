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

#include "rashens/ensemble.h"

#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "rashens/common.h"
#include "rashens/metrics.h"
#include "test_util.h"

namespace rashens {
namespace {

using ::rashens::testing::Names;
using ::rashens::testing::RandomClassification;

// JSD^2 = H(m) - (H(p) + H(q)) / 2, entropies in bits via natural logs.
double EntropyOracleJsd(const std::vector<double>& p, const std::vector<double>& q) {
  const auto h = [](const std::vector<double>& d) {
    double s = 0;
    for (double v : d) {
      if (v > 0) s -= v * std::log(v) / std::log(2.0);
    }
    return s;
  };
  std::vector<double> m(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return std::sqrt(std::max(0.0, h(m) - 0.5 * (h(p) + h(q))));
}

std::vector<double> RandomDistribution(std::mt19937_64& rng, std::size_t k) {
  std::exponential_distribution<double> e(1.0);
  std::bernoulli_distribution zero(0.2);
  std::vector<double> d(k);
  double s = 0;
  for (double& v : d) {
    v = zero(rng) ? 0.0 : e(rng);
    s += v;
  }
  if (s == 0) {
    d[0] = 1;
    s = 1;
  }
  for (double& v : d) v /= s;
  return d;
}

Tree ConstantTree(double value, std::size_t num_features = 2) {
  TreeNode leaf;
  leaf.value = value;
  leaf.count = 1;
  return Tree({leaf}, FeatureSubset({0}), TreeParams{}, num_features);
}

CandidateModel Constituent(const Dataset& train, const std::vector<int>& subset,
                           TreeParams params = {}, int id = 0) {
  CandidateModel m;
  m.id = id;
  m.subset = FeatureSubset(subset);
  m.tree = FitTree(train, m.subset, params);
  m.explanation = ComputeExplanationVector(m.tree, train, train);
  return m;
}

Ensemble ConstantEnsemble(const std::vector<double>& outputs,
                          TaskKind task = TaskKind::kBinaryClassification) {
  Ensemble e;
  e.task = task;
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    CandidateModel m;
    m.id = static_cast<int>(i);
    m.tree = ConstantTree(outputs[i]);
    e.constituents.push_back(m);
  }
  return e;
}

TEST(Jsd, Examples) {
  const std::vector<double> a = {0.3, 0.7};
  EXPECT_EQ(Jsd(a, a), 0.0);
  EXPECT_DOUBLE_EQ(Jsd(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 1.0);
  EXPECT_NEAR(Jsd(std::vector<double>{0.5, 0.5}, std::vector<double>{1, 0}), 0.5579, 1e-3);
}

TEST(Jsd, RejectsInvalidInputs) {
  EXPECT_THROW(Jsd(std::vector<double>{0.5, 0.4}, std::vector<double>{0.5, 0.5}), Error);
  EXPECT_THROW(Jsd(std::vector<double>{0.5, 0.5}, std::vector<double>{1.0}), Error);
  EXPECT_THROW(Jsd(std::vector<double>{1.5, -0.5}, std::vector<double>{0.5, 0.5}), Error);
}

TEST(Jsd, MatchesEntropyOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t k = 2 + t % 6;
    const auto p = RandomDistribution(rng, k);
    const auto q = RandomDistribution(rng, k);
    EXPECT_NEAR(Jsd(p, q), EntropyOracleJsd(p, q), 1e-7);
  }
}

TEST(Jsd, BernoulliFastPathAgrees) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 1000; ++t) {
    const double p = t % 10 == 0 ? 0.0 : u(rng), q = t % 7 == 0 ? 1.0 : u(rng);
    EXPECT_NEAR(BernoulliJsd(p, q),
                Jsd(std::vector<double>{1 - p, p}, std::vector<double>{1 - q, q}), 1e-12);
  }
}

TEST(Jsd, MetricAxiomsOnRandomTriples) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 10000; ++t) {
    const std::size_t k = 2 + t % 5;
    const auto p = RandomDistribution(rng, k);
    const auto q = RandomDistribution(rng, k);
    const auto r = RandomDistribution(rng, k);
    const double pq = Jsd(p, q), qr = Jsd(q, r), pr = Jsd(p, r);
    ASSERT_EQ(pq, Jsd(q, p));
    ASSERT_GE(pq, 0.0);
    ASSERT_LE(pq, 1.0);
    ASSERT_EQ(Jsd(p, p), 0.0);
    if (p != q) {
      ASSERT_GT(pq, 0.0);
    }
    ASSERT_LE(pr, pq + qr + 1e-9);
  }
}

TEST(PairwiseJsd, SymmetricWithZeroDiagonal) {
  const Dataset train = RandomClassification(200, 4, 1);
  const Tree a = FitTree(train, FeatureSubset({0}), TreeParams{.max_depth = 1});
  const Tree b = FitTree(train, FeatureSubset({3}), TreeParams{.max_depth = 1});
  const Tree c = FitTree(train, FeatureSubset({0, 1}), TreeParams{.max_depth = 3});
  const auto m = PairwiseJsd({&a, &b, &c, &a}, train);
  for (std::size_t i = 0; i < m.size(); ++i) {
    EXPECT_EQ(m[i][i], 0.0);
    for (std::size_t j = 0; j < m.size(); ++j) EXPECT_EQ(m[i][j], m[j][i]);
  }
  EXPECT_EQ(m[0][3], 0.0);
  // Stumps on independent features disagree somewhere.
  EXPECT_GT(m[0][1], 0.0);
  EXPECT_THROW(PairwiseJsd({&a}, train), Error);
}

TEST(PairwiseJsd, MeanOffDiagonal) {
  EXPECT_EQ(MeanOffDiagonal({{0}}), 0.0);
  EXPECT_DOUBLE_EQ(MeanOffDiagonal({{0, 0.2, 0.4}, {0.2, 0, 0.6}, {0.4, 0.6, 0}}), 0.4);
}

TEST(PredictVoting, EightOfTen) {
  const auto e = ConstantEnsemble({0.9, 0.8, 0.7, 0.6, 0.55, 0.51, 0.5, 0.99, 0.2, 0.1});
  const std::vector<double> row = {0, 0};
  const auto v = PredictVoting(e, row);
  EXPECT_DOUBLE_EQ(v.prediction, 0.8);
  EXPECT_DOUBLE_EQ(v.agreement.voting_ratio, 0.8);
  EXPECT_EQ(v.agreement.outputs.size(), 10u);
}

TEST(PredictVoting, Unanimous) {
  const std::vector<double> row = {0, 0};
  EXPECT_EQ(PredictVoting(ConstantEnsemble({0.9, 0.7, 0.6}), row).prediction, 1.0);
  const auto neg = PredictVoting(ConstantEnsemble({0.1, 0.2}), row);
  EXPECT_EQ(neg.prediction, 0.0);
  EXPECT_EQ(std::max(neg.agreement.voting_ratio, 1 - neg.agreement.voting_ratio), 1.0);
}

TEST(PredictVoting, RatioTakesMultiplesOfOneOverN) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u;
  for (int t = 0; t < 200; ++t) {
    const int n = 1 + t % 9;
    std::vector<double> outs(n);
    for (double& o : outs) o = u(rng);
    const double r = PredictVoting(ConstantEnsemble(outs), std::vector<double>{0, 0}).prediction;
    EXPECT_NEAR(r * n, std::round(r * n), 1e-12);
  }
}

TEST(PredictVoting, RegressionMeanAndCv) {
  const auto v = PredictVoting(ConstantEnsemble({1.0, 3.0}, TaskKind::kRegression),
                               std::vector<double>{0, 0});
  EXPECT_EQ(v.prediction, 2.0);
  EXPECT_DOUBLE_EQ(v.agreement.c_v, 0.5);
  const std::vector<double> outs = {0.1, 0.7, 1.3, 2.9, 5.5};
  double mean = 0;
  for (double o : outs) mean += o;
  mean /= 5;
  EXPECT_EQ(PredictVoting(ConstantEnsemble(outs, TaskKind::kRegression),
                          std::vector<double>{0, 0})
                .prediction,
            mean);
}

TEST(CoefficientOfVariation, ZeroMeanIsAnError) {
  EXPECT_THROW(CoefficientOfVariation(std::vector<double>{-1.0, 1.0}), Error);
  EXPECT_THROW(PredictVoting(ConstantEnsemble({-2.0, 2.0}, TaskKind::kRegression),
                             std::vector<double>{0, 0}),
               Error);
}

TEST(Ensemble, RejectsEmpty) {
  Ensemble e;
  EXPECT_THROW(e.Validate(), Error);
  e = ConstantEnsemble({0.5});
  e.combiner = CombinerKind::kStacking;
  EXPECT_THROW(e.Validate(), Error);
}

TEST(FitStacking, SingleConstituentKeepsAuroc) {
  const Dataset train = RandomClassification(300, 5, 3);
  const Dataset val = RandomClassification(200, 5, 4);
  const auto c = Constituent(train, {0, 1, 2});
  const auto e = FitStacking({c}, train, TreeParams{}, 7);
  ASSERT_EQ(e.stacking.weights.size(), 1u);
  EXPECT_GT(e.stacking.weights[0], 0.0);
  EXPECT_DOUBLE_EQ(Auroc(PredictAll(e, val), val.labels()),
                   Auroc(c.tree.PredictAll(val), val.labels()));
}

TEST(FitStacking, IdenticalConstituentsRankIdentical) {
  const Dataset train = RandomClassification(300, 5, 5);
  const Dataset val = RandomClassification(100, 5, 6);
  const auto c = Constituent(train, {0, 1});
  const auto e = FitStacking({c, c, c}, train, TreeParams{}, 1);
  const auto s = PredictAll(e, val);
  const auto t = c.tree.PredictAll(val);
  for (std::size_t i = 0; i < s.size(); ++i) {
    for (std::size_t j = 0; j < s.size(); ++j) {
      EXPECT_EQ(t[i] < t[j], s[i] < s[j]);
    }
  }
}

// Each constituent sees the label through its own feature on one half of the
// rows (group flag in feature 0) and noise on the other half.
Dataset Complementary(std::size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(0.5);
  std::vector<double> values, labels;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = coin(rng), y = coin(rng);
    values.push_back(g);
    values.push_back(g == 0 ? y : coin(rng));
    values.push_back(g == 1 ? y : coin(rng));
    labels.push_back(y);
  }
  return Dataset(Names(3), std::move(values), std::move(labels),
                 TaskKind::kBinaryClassification);
}

TEST(FitStacking, ComplementaryConstituentsBeatEither) {
  const Dataset train = Complementary(400, 1);
  const Dataset val = Complementary(300, 2);
  const auto a = Constituent(train, {0, 1});
  const auto b = Constituent(train, {0, 2});
  const auto e = FitStacking({a, b}, train, TreeParams{}, 3);
  const double stacked = Auroc(PredictAll(e, val), val.labels());
  const double best = std::max(Auroc(a.tree.PredictAll(val), val.labels()),
                               Auroc(b.tree.PredictAll(val), val.labels()));
  EXPECT_GT(stacked, best);
  EXPECT_GT(stacked, 0.95);
}

TEST(FitStacking, Deterministic) {
  const Dataset train = RandomClassification(200, 4, 9);
  const auto cs = std::vector<CandidateModel>{Constituent(train, {0}), Constituent(train, {1, 2})};
  const auto a = FitStacking(cs, train, TreeParams{}, 5);
  const auto b = FitStacking(cs, train, TreeParams{}, 5);
  EXPECT_EQ(a.stacking.weights, b.stacking.weights);
  EXPECT_EQ(a.stacking.intercept, b.stacking.intercept);
}

TEST(FitStacking, DegenerateFoldIsAnError) {
  std::vector<double> values, labels;
  for (int i = 0; i < 20; ++i) {
    values.push_back(i);
    labels.push_back(i == 0 ? 1.0 : 0.0);
  }
  const Dataset train(Names(1), values, labels, TaskKind::kBinaryClassification);
  CandidateModel c;
  c.subset = FeatureSubset({0});
  c.tree = FitTree(train, c.subset, TreeParams{});
  EXPECT_THROW(FitStacking({c}, train, TreeParams{}, 1), Error);
}

TEST(RiskStratify, IdenticalCorrectConstituents) {
  const std::vector<double> values = {0, 0, 1, 1, 2, 2};
  const std::vector<double> labels = {0, 0, 1, 1, 1, 1};
  const Dataset ds(Names(1), values, labels, TaskKind::kBinaryClassification);
  CandidateModel c;
  c.subset = FeatureSubset({0});
  c.tree = FitTree(ds, c.subset, TreeParams{.max_depth = 2, .min_samples_leaf = 1});
  Ensemble e;
  e.constituents = {c, c, c};
  const auto buckets = RiskStratify(e, ds, 5);
  ASSERT_EQ(buckets.size(), 5u);
  EXPECT_EQ(buckets.back().count, 6);
  EXPECT_EQ(buckets.back().accuracy, 1.0);
  const auto [low, high] = ExtremeBuckets(buckets);
  EXPECT_EQ(low, high);
}

TEST(RiskStratify, EvenSplitGoesToLowestBucket) {
  const Dataset ds(Names(2), {0, 0, 0, 0}, {1, 0}, TaskKind::kBinaryClassification);
  const auto buckets = RiskStratify(ConstantEnsemble({0.9, 0.1}), ds, 4);
  EXPECT_EQ(buckets.front().count, 2);
  // Tie votes count as positive.
  EXPECT_EQ(buckets.front().correct, 1);
  int total = 0;
  for (const auto& b : buckets) total += b.count;
  EXPECT_EQ(total, 2);
  EXPECT_TRUE(std::isnan(buckets[1].accuracy));
}

TEST(RiskStratify, CountsSumToRows) {
  const Dataset train = RandomClassification(300, 6, 11);
  const Dataset test = RandomClassification(150, 6, 12);
  Ensemble e;
  for (int j = 0; j < 5; ++j) e.constituents.push_back(Constituent(train, {j, j + 1}));
  for (int bins : {1, 3, 7}) {
    int total = 0;
    for (const auto& b : RiskStratify(e, test, bins)) total += b.count;
    EXPECT_EQ(total, 150);
  }
  EXPECT_THROW(RiskStratify(e, test, 0), Error);
}

class DriftTest : public ::testing::Test {
 protected:
  DriftTest() : train_(RandomClassification(400, 6, 21, 4, 0.3)),
                test_(RandomClassification(200, 6, 22, 4, 0.3)) {
    // Constituents rely on disjoint features, so independent noise pulls
    // their outputs apart.
    for (int j = 0; j < 4; ++j) {
      ensemble_.constituents.push_back(Constituent(train_, {j}, TreeParams{.max_depth = 3}, j));
    }
  }
  Dataset train_, test_;
  Ensemble ensemble_;
};

TEST_F(DriftTest, LevelZeroIsCleanEvaluation) {
  const auto r = DriftExperiment(ensemble_, test_, {0.0, 1.0}, PerturbationKind::kGaussian, 3, 5);
  const auto clean = EvaluatePredictions(PredictAll(ensemble_, test_), test_);
  EXPECT_EQ(r.rows[0].loss_mean, clean.loss);
  EXPECT_EQ(r.rows[0].loss_std, 0.0);
  EXPECT_EQ(r.rows[0].accuracy_mean, clean.accuracy);
  EXPECT_EQ(r.rows[0].jsd_mean,
            MeanOffDiagonal(PairwiseJsd(ConstituentPredictions(ensemble_, test_))));
}

TEST_F(DriftTest, JsdGrowsWithNoise) {
  const auto r = DriftExperiment(ensemble_, test_, {0.0, 0.4, 0.8, 1.2, 1.6, 2.0},
                                 PerturbationKind::kGaussian, 1, 30);
  ASSERT_EQ(r.rows.size(), 6u);
  EXPECT_GE(r.rows.back().jsd_mean, r.rows.front().jsd_mean);
  EXPECT_GT(r.rows.back().loss_mean, r.rows.front().loss_mean);
  EXPECT_GT(r.rows.back().jsd_std, 0.0);
}

TEST_F(DriftTest, ShuffleMoreColumnsHurtsMore) {
  const auto r = DriftExperiment(ensemble_, test_, {0.1, 0.9}, PerturbationKind::kShuffle, 2, 30);
  EXPECT_GE(r.rows[1].loss_mean, r.rows[0].loss_mean);
}

TEST_F(DriftTest, RejectsUnorderedLevels) {
  EXPECT_THROW(DriftExperiment(ensemble_, test_, {0.4, 0.4}, PerturbationKind::kGaussian, 1, 2),
               Error);
}

TEST_F(DriftTest, ReportsSerialize) {
  const auto r = DriftExperiment(ensemble_, test_, {0.0, 1.0}, PerturbationKind::kGaussian, 1, 3);
  const auto j = ToJson(r);
  EXPECT_EQ(j["rows"].size(), 2u);
  EXPECT_EQ(j["kind"], "gaussian");
  const auto dir = testing::TempDir("drift_out");
  WriteDriftCsv(dir / "drift.csv", r);
  WriteDriftGnuplot(dir / "drift.dat", r);
  std::ifstream dat(dir / "drift.dat");
  std::string line;
  std::getline(dat, line);
  EXPECT_EQ(line.front(), '#');
}

TEST(Similarity, JaccardAndCosine) {
  EXPECT_EQ(Jaccard({true, false, true}, {true, false, true}), 1.0);
  EXPECT_EQ(Jaccard({true, false}, {false, true}), 0.0);
  EXPECT_EQ(Jaccard({false, false}, {false, false}), 1.0);
  EXPECT_DOUBLE_EQ(Jaccard({true, true, false}, {true, false, true}), 1.0 / 3.0);
  const std::vector<double> v = {0.2, 0.4, 0.1};
  EXPECT_NEAR(CosineSimilarity(v, v), 1.0, 1e-15);
}

TEST(Similarity, AgainstReferenceTree) {
  const Dataset train = RandomClassification(300, 4, 31);
  const auto c = Constituent(train, {0, 1, 2, 3});
  Ensemble e;
  e.constituents = {c};
  const auto r = CompareToReference(e, c.tree, c.explanation, train);
  EXPECT_EQ(r.jaccard, 1.0);
  EXPECT_NEAR(r.shap_cosine, 1.0, 1e-12);
}

TEST(Ensemble, JsonRoundTrip) {
  const Dataset train = RandomClassification(200, 4, 41);
  const auto e = FitStacking({Constituent(train, {0}, {}, 3), Constituent(train, {1, 2}, {}, 8)},
                             train, TreeParams{}, 2);
  const auto back = EnsembleFromJson(ToJson(e));
  EXPECT_EQ(ToJson(back), ToJson(e));
  EXPECT_EQ(PredictAll(back, train), PredictAll(e, train));
}

}  // namespace
}  // namespace rashens
