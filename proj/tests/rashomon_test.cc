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

#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "rashens/common.h"
#include "test_util.h"

namespace rashens {
namespace {

using ::rashens::testing::RandomClassification;

// Counts subsets of {0..F-1} with size in [K, S] that contain {0..K-1}.
double EnumeratedInclusion(int f, int k, int s_max) {
  int64_t hit = 0, total = 0;
  for (uint32_t mask = 0; mask < (1u << f); ++mask) {
    const int size = std::popcount(mask);
    if (size < k || size > s_max) continue;
    ++total;
    if ((mask & ((1u << k) - 1)) == (1u << k) - 1) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

TEST(InclusionProbability, SmallCaseMatchesEnumeration) {
  EXPECT_NEAR(SubsetInclusionProbability(5, 1, 2), 1.0 / 3.0, 1e-12);
  for (int f = 1; f <= 10; ++f) {
    for (int k = 1; k <= f; ++k) {
      for (int s = k; s <= f; ++s) {
        EXPECT_NEAR(SubsetInclusionProbability(f, k, s), EnumeratedInclusion(f, k, s),
                    1e-12)
            << f << " " << k << " " << s;
      }
    }
  }
}

TEST(InclusionProbability, EmptyKeyIsCertain) {
  EXPECT_EQ(SubsetInclusionProbability(10, 0, 3), 1.0);
}

TEST(InclusionProbability, HundredFeatureWorkedExample) {
  const double p = SubsetInclusionProbability(100, 4, 10);
  EXPECT_NEAR(p, 5e-5, 0.2e-5);
  // Exact rational value from integer binomial sums.
  EXPECT_NEAR(p, 5.107367968400235e-05, 1e-15);
}

TEST(InclusionProbability, LargeArgumentsStayFinite) {
  const double p = SubsetInclusionProbability(5000, 3, 400);
  EXPECT_TRUE(std::isfinite(p));
  EXPECT_GT(p, 0.0);
  EXPECT_LT(p, 1.0);
}

// Growing K also shrinks the admissible size range, so monotonicity in K
// only holds while the range stays small next to F (checked up to F = 80
// by exhaustive search: no violation when 2 * S_max <= F).
TEST(InclusionProbability, Monotonicity) {
  for (int f = 4; f <= 60; f += 7) {
    for (int s = 2; 2 * s <= f; s += 3) {
      for (int k = 1; k < s; ++k) {
        EXPECT_GE(SubsetInclusionProbability(f, k, s) + 1e-15,
                  SubsetInclusionProbability(f, k + 1, s));
      }
    }
    for (int s = 2; s <= f; s += 3) {
      for (int k = 1; k <= s && s < f; ++k) {
        EXPECT_LE(SubsetInclusionProbability(f, k, s),
                  SubsetInclusionProbability(f, k, s + 1) + 1e-15);
      }
    }
  }
}

TEST(InclusionProbability, KeyEqualToFullSpaceIsCertain) {
  // K = S_max = F leaves a single admissible subset, which contains K.
  EXPECT_EQ(SubsetInclusionProbability(4, 4, 4), 1.0);
  EXPECT_LT(SubsetInclusionProbability(4, 3, 4), 1.0);
}

TEST(InclusionProbability, RejectsBadArguments) {
  EXPECT_THROW(SubsetInclusionProbability(5, 3, 2), Error);
  EXPECT_THROW(SubsetInclusionProbability(5, 1, 6), Error);
}

TEST(RequiredSampleSize, HundredFeatureWorkedExample) {
  // ln(0.05) / ln(1 - P_K) with the unrounded P_K.
  const double p = 5.107367968400235e-05;
  const auto expected =
      static_cast<int64_t>(std::ceil(std::log(0.05) / std::log(1.0 - p)));
  EXPECT_EQ(expected, 58654);
  EXPECT_EQ(RequiredSampleSize(100, 4, 10, 0.95), expected);
  // With P_K rounded to 5e-5 the count is 59,914; both are "about 60,000".
  EXPECT_EQ(RequiredSampleSizeFromProbability(5e-5, 0.95), 59914);
}

TEST(RequiredSampleSize, EdgeCases) {
  EXPECT_EQ(RequiredSampleSizeFromProbability(0.5, 0.01), 1);
  EXPECT_EQ(RequiredSampleSizeFromProbability(1.0, 0.95), 1);
  EXPECT_EQ(RequiredSampleSize(6, 6, 6, 0.99), 1);
  EXPECT_THROW(RequiredSampleSizeFromProbability(0.0, 0.95), Error);
  EXPECT_THROW(RequiredSampleSizeFromProbability(0.5, 1.0), Error);
  EXPECT_THROW(RequiredSampleSizeFromProbability(0.5, 0.0), Error);
}

TEST(RequiredSampleSize, Monotonicity) {
  int64_t prev = 0;
  for (double alpha = 0.05; alpha < 0.999; alpha += 0.05) {
    const int64_t eta = RequiredSampleSizeFromProbability(0.01, alpha);
    EXPECT_GE(eta, prev);
    prev = eta;
  }
  prev = std::numeric_limits<int64_t>::max();
  for (double p = 0.001; p < 1.0; p *= 1.5) {
    const int64_t eta = RequiredSampleSizeFromProbability(p, 0.95);
    EXPECT_LE(eta, prev);
    prev = eta;
  }
  // Guarantee: (1 - P)^eta <= 1 - alpha < (1 - P)^(eta - 1).
  for (double p : {0.003, 0.02, 0.3}) {
    const int64_t eta = RequiredSampleSizeFromProbability(p, 0.9);
    EXPECT_LE(std::pow(1 - p, eta), 0.1 + 1e-12);
    EXPECT_GT(std::pow(1 - p, eta - 1), 0.1);
  }
}

TEST(SamplingPlan, ValidatesInvariants) {
  SamplingPlan plan{.num_features = 10, .key_size = 2, .max_size = 4};
  EXPECT_NO_THROW(plan.Validate());
  plan.key_size = 0;
  EXPECT_THROW(plan.Validate(), Error);
  plan.key_size = 5;
  EXPECT_THROW(plan.Validate(), Error);
  plan.key_size = 2;
  plan.max_size = 11;
  EXPECT_THROW(plan.Validate(), Error);
  plan.max_size = 4;
  plan.alpha = 1.0;
  EXPECT_THROW(plan.Validate(), Error);
  plan.alpha = 0.9;
  plan.n_models = 0;
  EXPECT_THROW(plan.Validate(), Error);
}

TEST(SamplingPlan, JsonRoundTrip) {
  SamplingPlan plan{.num_features = 12, .key_size = 2, .max_size = 5, .alpha = 0.9,
                    .n_models = 77, .seed = 31, .size_mode = SizeMode::kStratified};
  const SamplingPlan back = SamplingPlanFromJson(ToJson(plan));
  EXPECT_EQ(ToJson(back), ToJson(plan));
}

TEST(SampleCandidates, FullSizeGivesFullSet) {
  SamplingPlan plan{.num_features = 6, .key_size = 6, .max_size = 6, .n_models = 20};
  for (const auto& s : SampleCandidates(plan)) {
    EXPECT_EQ(s.indices(), (std::vector<int>{0, 1, 2, 3, 4, 5}));
  }
}

TEST(SampleCandidates, SizesWithinRange) {
  SamplingPlan plan{.num_features = 20, .key_size = 2, .max_size = 5,
                    .n_models = 10000, .seed = 3};
  const auto subsets = SampleCandidates(plan);
  ASSERT_EQ(subsets.size(), 10000u);
  for (const auto& s : subsets) {
    EXPECT_GE(s.size(), 2u);
    EXPECT_LE(s.size(), 5u);
    EXPECT_GE(s.indices().front(), 0);
    EXPECT_LT(s.indices().back(), 20);
  }
}

TEST(SampleCandidates, SizesAreUniform) {
  SamplingPlan plan{.num_features = 20, .key_size = 1, .max_size = 6,
                    .n_models = 100000, .seed = 11};
  std::map<std::size_t, int> counts;
  for (const auto& s : SampleCandidates(plan)) ++counts[s.size()];
  ASSERT_EQ(counts.size(), 6u);
  const double expected = 100000.0 / 6.0;
  double chi2 = 0;
  for (const auto& [size, c] : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(5);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.001);
}

TEST(SampleCandidates, FeaturesAreUniformGivenSize) {
  SamplingPlan plan{.num_features = 8, .key_size = 3, .max_size = 3,
                    .n_models = 40000, .seed = 5};
  std::vector<int> counts(8, 0);
  for (const auto& s : SampleCandidates(plan)) {
    for (int j : s.indices()) ++counts[j];
  }
  const double expected = 40000.0 * 3 / 8;
  double chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(7);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.001);
}

TEST(SampleCandidates, DeterministicGivenSeed) {
  SamplingPlan plan{.num_features = 15, .key_size = 1, .max_size = 4,
                    .n_models = 500, .seed = 42};
  EXPECT_EQ(SampleCandidates(plan), SampleCandidates(plan));
  SamplingPlan other = plan;
  other.seed = 43;
  EXPECT_NE(SampleCandidates(plan), SampleCandidates(other));
}

TEST(SampleCandidates, StratifiedModeCyclesSizes) {
  SamplingPlan plan{.num_features = 10, .key_size = 2, .max_size = 4, .n_models = 9,
                    .seed = 1, .size_mode = SizeMode::kStratified};
  const auto subsets = SampleCandidates(plan);
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    EXPECT_EQ(subsets[i].size(), 2 + i % 3);
  }
}

TEST(RashomonRatio, Examples) {
  RashomonSet set;
  set.n_sampled = 1049999;
  set.members.resize(63374);
  EXPECT_NEAR(RashomonRatio(set), 0.0604, 5e-5);
  set.members.clear();
  EXPECT_EQ(RashomonRatio(set), 0.0);
  set.n_sampled = 5;
  set.members.resize(5);
  EXPECT_EQ(RashomonRatio(set), 1.0);
  set.n_sampled = 0;
  EXPECT_THROW(RashomonRatio(set), Error);
}

class BuildTest : public ::testing::Test {
 protected:
  BuildTest()
      : train_(RandomClassification(300, 10, 1, 3, 0.8)),
        val_(RandomClassification(150, 10, 2, 3, 0.8)) {}

  RashomonInputs Inputs() const {
    return RashomonInputs{train_, val_, train_, TreeParams{.max_depth = 4}};
  }
  std::vector<FeatureSubset> Candidates(int n, uint64_t seed = 9) const {
    return SampleCandidates(SamplingPlan{.num_features = 10, .key_size = 1,
                                         .max_size = 4, .n_models = n, .seed = seed});
  }

  Dataset train_;
  Dataset val_;
};

TEST_F(BuildTest, InfiniteEpsilonKeepsEverything) {
  const auto cands = Candidates(60);
  const auto set = BuildRashomonSet(cands, Inputs(), ReferenceSpec{},
                                    std::numeric_limits<double>::infinity());
  ASSERT_EQ(set.members.size(), cands.size());
  EXPECT_EQ(RashomonRatio(set), 1.0);
  for (std::size_t i = 0; i < cands.size(); ++i) {
    EXPECT_EQ(set.members[i].id, static_cast<int>(i));
    EXPECT_EQ(set.members[i].subset, cands[i]);
  }
}

TEST_F(BuildTest, MembershipIsExactlyTheBandPredicate) {
  const auto cands = Candidates(120);
  const auto everyone = BuildRashomonSet(cands, Inputs(), ReferenceSpec{},
                                         std::numeric_limits<double>::infinity());
  const auto set = BuildRashomonSet(cands, Inputs(), ReferenceSpec{}, 0.02);
  EXPECT_EQ(set.ref_loss, everyone.ref_loss);
  EXPECT_EQ(set.ref_loss, ReferenceLoss(Inputs(), ReferenceSpec{}));
  std::set<int> ids;
  for (const auto& m : set.members) {
    EXPECT_LE(m.val_loss, set.ref_loss + set.epsilon);
    EXPECT_FALSE(m.explanation.values.empty());
    ids.insert(m.id);
  }
  // Every excluded candidate is outside the band.
  for (const auto& m : everyone.members) {
    EXPECT_EQ(ids.count(m.id) == 1, m.val_loss <= set.ref_loss + 0.02) << m.id;
  }
}

TEST_F(BuildTest, RatioMonotoneInEpsilon) {
  const auto cands = Candidates(100);
  double prev = -1;
  for (double eps : {0.0, 0.01, 0.03, 0.06, 0.1, 0.2, 0.5}) {
    const double r = RashomonRatio(BuildRashomonSet(cands, Inputs(), ReferenceSpec{}, eps));
    EXPECT_GE(r, prev);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    prev = r;
  }
}

TEST_F(BuildTest, ThresholdReference) {
  const auto cands = Candidates(100);
  ReferenceSpec ref{.kind = ReferenceSpec::Kind::kThreshold, .threshold_loss = 0.25};
  const auto set = BuildRashomonSet(cands, Inputs(), ref, 0.0);
  EXPECT_EQ(set.ref_loss, 0.25);
  for (const auto& m : set.members) EXPECT_LE(m.val_loss, 0.25);
}

TEST_F(BuildTest, ExplanationsMatchDirectComputation) {
  const auto cands = Candidates(20);
  const auto set = BuildRashomonSet(cands, Inputs(), ReferenceSpec{},
                                    std::numeric_limits<double>::infinity());
  for (const auto& m : set.members) {
    const Tree direct = FitTree(train_, m.subset, Inputs().params);
    EXPECT_EQ(direct, m.tree);
    EXPECT_EQ(ComputeExplanationVector(direct, val_, train_).values,
              m.explanation.values);
  }
}

TEST_F(BuildTest, DuplicateSubsetsShareResults) {
  std::vector<FeatureSubset> cands = {FeatureSubset({0, 1}), FeatureSubset({2}),
                                      FeatureSubset({0, 1})};
  const auto set = BuildRashomonSet(cands, Inputs(), ReferenceSpec{},
                                    std::numeric_limits<double>::infinity());
  EXPECT_EQ(set.n_sampled, 3);
  EXPECT_EQ(set.n_distinct_sampled, 2);
  ASSERT_EQ(set.members.size(), 3u);
  EXPECT_EQ(set.members[0].tree, set.members[2].tree);
  EXPECT_EQ(set.members[0].val_loss, set.members[2].val_loss);
}

TEST_F(BuildTest, ReproducibleBitExact) {
  const auto a = BuildRashomonSet(Candidates(80), Inputs(), ReferenceSpec{}, 0.05);
  const auto b = BuildRashomonSet(Candidates(80), Inputs(), ReferenceSpec{}, 0.05);
  ASSERT_EQ(a.members.size(), b.members.size());
  for (std::size_t i = 0; i < a.members.size(); ++i) {
    EXPECT_EQ(a.members[i].id, b.members[i].id);
    EXPECT_EQ(a.members[i].tree, b.members[i].tree);
    EXPECT_EQ(a.members[i].explanation.values, b.members[i].explanation.values);
  }
}

TEST_F(BuildTest, NegativeEpsilonRejected) {
  EXPECT_THROW(BuildRashomonSet(Candidates(5), Inputs(), ReferenceSpec{}, -0.1), Error);
}

TEST_F(BuildTest, DeLongAdmitsAtLeastTheHardBand) {
  const auto cands = Candidates(100);
  ReferenceSpec delong{.test = MembershipTest::kDeLong, .significance = 0.05};
  const auto hard = BuildRashomonSet(cands, Inputs(), ReferenceSpec{}, 0.0);
  const auto soft = BuildRashomonSet(cands, Inputs(), delong, 0.0);
  EXPECT_GE(soft.members.size(), hard.members.size());
}

TEST_F(BuildTest, SaveLoadRoundTrip) {
  const auto cands = Candidates(30);
  const auto set = BuildRashomonSet(cands, Inputs(), ReferenceSpec{}, 0.05);
  const auto dir = testing::TempDir("rashomon_save");
  SamplingPlan plan{.num_features = 10, .key_size = 1, .max_size = 4, .n_models = 30,
                    .seed = 9};
  SaveRashomonSet(set, plan, train_.schema(), dir);
  const auto back = LoadRashomonSet(dir);
  EXPECT_EQ(back.ref_loss, set.ref_loss);
  EXPECT_EQ(back.n_sampled, set.n_sampled);
  ASSERT_EQ(back.members.size(), set.members.size());
  for (std::size_t i = 0; i < set.members.size(); ++i) {
    EXPECT_EQ(back.members[i].id, set.members[i].id);
    EXPECT_EQ(back.members[i].tree, set.members[i].tree);
    EXPECT_EQ(back.members[i].val_loss, set.members[i].val_loss);
    EXPECT_EQ(back.members[i].explanation.values, set.members[i].explanation.values);
  }
}

TEST(DeLong, IdenticalScoresGiveOne) {
  const std::vector<double> s = {0.1, 0.4, 0.35, 0.8};
  const std::vector<double> y = {0, 0, 1, 1};
  EXPECT_EQ(DeLongPValue(s, s, y), 1.0);
}

TEST(DeLong, ClearlyWorseCandidateGetsSmallP) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  std::vector<double> good, bad, y;
  for (int i = 0; i < 400; ++i) {
    const double label = i % 2;
    y.push_back(label);
    good.push_back(label * 2 + g(rng));
    bad.push_back(label * 0.1 + g(rng));
  }
  EXPECT_LT(DeLongPValue(bad, good, y), 1e-6);
  EXPECT_GT(DeLongPValue(good, bad, y), 1 - 1e-6);
}

TEST(DeLong, NeedsBothClasses) {
  const std::vector<double> s = {0.1, 0.2};
  const std::vector<double> y = {1, 1};
  EXPECT_THROW(DeLongPValue(s, s, y), Error);
}

}  // namespace
}  // namespace rashens
