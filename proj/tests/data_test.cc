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

#include "rashens/data.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "gtest/gtest.h"
#include "rashens/common.h"
#include "test_util.h"

namespace rashens {
namespace {

using ::rashens::testing::DataPath;
using ::rashens::testing::TempDir;
using ::rashens::testing::WriteFile;

CsvOptions Target(const std::string& name) {
  CsvOptions o;
  o.target_column = name;
  return o;
}

Dataset OneColumn(std::vector<double> values, std::vector<double> labels) {
  return Dataset(FeatureSchema({"x"}), std::move(values), std::move(labels),
                 TaskKind::kBinaryClassification);
}

TEST(LoadCsv, ParsesNumericFile) {
  const auto dir = TempDir("load_numeric");
  const auto path = WriteFile(dir / "a.csv", "a,b,y\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n");
  const Dataset ds = LoadCsv(path, Target("y"));
  EXPECT_EQ(ds.cols(), 2u);
  EXPECT_EQ(ds.rows(), 4u);
  EXPECT_EQ(ds.schema().names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.at(2, 1), 6.0);
  EXPECT_EQ(ds.labels(), (std::vector<double>{0, 1, 0, 1}));
}

TEST(LoadCsv, MissingTargetColumn) {
  const auto dir = TempDir("load_missing_target");
  const auto path = WriteFile(dir / "a.csv", "a,b\n1,2\n");
  try {
    LoadCsv(path, Target("y"));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("target column not found"),
              std::string::npos);
  }
}

TEST(LoadCsv, RejectsBadInput) {
  const auto dir = TempDir("load_bad");
  EXPECT_THROW(LoadCsv(dir / "absent.csv", Target("y")), Error);
  EXPECT_THROW(LoadCsv(WriteFile(dir / "empty.csv", "a,y\n"), Target("y")),
               Error);
  EXPECT_THROW(LoadCsv(WriteFile(dir / "missing.csv", "a,y\n1,0\n,1\n"),
                       Target("y")),
               Error);
  EXPECT_THROW(LoadCsv(WriteFile(dir / "nonnum.csv", "a,y\n1,0\nfoo,1\n"),
                       Target("y")),
               Error);
  EXPECT_THROW(LoadCsv(WriteFile(dir / "label.csv", "a,y\n1,0\n2,3\n"),
                       Target("y")),
               Error);
}

TEST(LoadCsv, OneHotEncodesCategoriesLexicographically) {
  const auto dir = TempDir("load_cat");
  const auto path = WriteFile(dir / "c.csv",
                              "color,size,y\nred,1,0\nblue,2,1\ngreen,3,0\n");
  const Dataset ds = LoadCsv(path, Target("y"));
  EXPECT_EQ(ds.schema().names(),
            (std::vector<std::string>{"color=blue", "color=green", "color=red",
                                      "size"}));
  EXPECT_EQ(ds.at(0, 2), 1.0);
  EXPECT_EQ(ds.at(1, 0), 1.0);
  EXPECT_EQ(ds.at(1, 2), 0.0);

  CsvOptions forced = Target("y");
  forced.categorical_columns = {"size"};
  const Dataset ds2 = LoadCsv(path, forced);
  EXPECT_EQ(ds2.cols(), 6u);
  EXPECT_EQ(ds2.schema().name(3), "size=1");
}

TEST(LoadCsv, HeartDataset) {
  CsvOptions o = Target("target");
  const Dataset ds = LoadCsv(DataPath("heart.csv"), o);
  EXPECT_EQ(ds.rows(), 303u);
  EXPECT_EQ(ds.CountPositive(), 139u);
  EXPECT_EQ(ds.task(), TaskKind::kBinaryClassification);
}

TEST(WriteCsv, RoundTripsBitExactly) {
  const Dataset ds = testing::RandomClassification(50, 4, 3);
  const auto dir = TempDir("write_roundtrip");
  WriteCsv(ds, dir / "out.csv");
  const Dataset back = LoadCsv(dir / "out.csv", Target("target"));
  EXPECT_EQ(back.values(), ds.values());
  EXPECT_EQ(back.labels(), ds.labels());
}

TEST(Split, StratifiesTenRows) {
  const Dataset ds =
      OneColumn({0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, {1, 1, 1, 1, 1, 0, 0, 0, 0, 0});
  const auto [train, test] = Split(ds, 0.8, 7);
  EXPECT_EQ(train.rows(), 8u);
  EXPECT_EQ(train.CountPositive(), 4u);
  EXPECT_EQ(test.rows(), 2u);
}

TEST(Split, HeartCounts) {
  const Dataset ds = LoadCsv(DataPath("heart.csv"), Target("target"));
  const auto [train, test] = Split(ds, 0.8, 1);
  EXPECT_EQ(train.rows(), 242u);
  EXPECT_EQ(test.rows(), 61u);
}

TEST(Split, DeterministicPartition) {
  std::vector<double> ids(40);
  std::iota(ids.begin(), ids.end(), 0.0);
  std::vector<double> labels(40);
  for (std::size_t i = 0; i < 40; ++i) labels[i] = (i * 7 % 3 == 0) ? 1 : 0;
  const Dataset ds = OneColumn(ids, labels);
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const auto [a_train, a_test] = Split(ds, 0.7, seed);
    const auto [b_train, b_test] = Split(ds, 0.7, seed);
    EXPECT_EQ(a_train.values(), b_train.values());
    EXPECT_EQ(a_test.values(), b_test.values());

    std::vector<double> all = a_train.values();
    all.insert(all.end(), a_test.values().begin(), a_test.values().end());
    std::sort(all.begin(), all.end());
    EXPECT_EQ(all, ids) << "seed " << seed;
  }
}

TEST(Split, RejectsSplitThatDropsAClass) {
  const Dataset ds = OneColumn({0, 1, 2}, {1, 0, 0});
  EXPECT_THROW(Split(ds, 0.5, 0), Error);
  EXPECT_THROW(Split(ds, 1.0, 0), Error);
}

TEST(Standardize, TwoPointSymmetry) {
  const Dataset train = OneColumn({0, 2}, {0, 1});
  const Dataset test = OneColumn({1}, {0});
  const auto r = Standardize(train, {test});
  EXPECT_EQ(r.train.values(), (std::vector<double>{-1, 1}));
  EXPECT_EQ(r.others[0].values(), (std::vector<double>{0}));
}

TEST(Standardize, ConstantColumnMapsToZero) {
  const Dataset train = OneColumn({5, 5, 5}, {0, 1, 0});
  const auto r = Standardize(train, {});
  EXPECT_EQ(r.train.values(), (std::vector<double>{0, 0, 0}));
  EXPECT_TRUE(r.params.constant[0]);
}

TEST(Standardize, TrainingMomentsProperty) {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    const Dataset ds = testing::RandomClassification(100, 5, seed);
    std::vector<double> values = ds.values();
    for (std::size_t i = 0; i < ds.rows(); ++i) values[i * 5 + 1] = 3.0 * values[i * 5 + 1] + 10.0;
    const Dataset shifted(ds.schema(), values, ds.labels(), ds.task());
    const auto r = Standardize(shifted, {});
    for (std::size_t j = 0; j < 5; ++j) {
      double mean = 0, var = 0;
      for (std::size_t i = 0; i < ds.rows(); ++i) mean += r.train.at(i, j);
      mean /= 100.0;
      for (std::size_t i = 0; i < ds.rows(); ++i) {
        var += (r.train.at(i, j) - mean) * (r.train.at(i, j) - mean);
      }
      EXPECT_NEAR(mean, 0.0, 1e-9);
      EXPECT_NEAR(std::sqrt(var / 100.0), 1.0, 1e-9);
    }
  }
}

TEST(Perturb, ZeroNoiseIsIdentity) {
  const Dataset ds = testing::RandomClassification(30, 3, 1);
  PerturbationSpec spec;
  spec.sigma2 = 0.0;
  spec.seed = 5;
  EXPECT_EQ(Perturb(ds, spec).values(), ds.values());
}

TEST(Perturb, ShuffleOneColumnPreservesMultiset) {
  const Dataset ds = OneColumn({1, 2, 3, 4, 5, 6, 7, 8}, {0, 1, 0, 1, 0, 1, 0, 1});
  PerturbationSpec spec;
  spec.kind = PerturbationKind::kShuffle;
  spec.fraction = 1.0;
  spec.seed = 3;
  const Dataset out = Perturb(ds, spec);
  auto sorted = out.values();
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, ds.values());
  EXPECT_NE(out.values(), ds.values());
  EXPECT_EQ(out.labels(), ds.labels());
}

TEST(Perturb, ShuffleTouchesCeilFractionOfColumns) {
  const Dataset ds = testing::RandomClassification(50, 10, 2);
  PerturbationSpec spec;
  spec.kind = PerturbationKind::kShuffle;
  spec.fraction = 0.3;
  spec.seed = 9;
  const Dataset out = Perturb(ds, spec);
  int changed = 0;
  for (std::size_t j = 0; j < 10; ++j) {
    bool diff = false;
    for (std::size_t i = 0; i < 50; ++i) diff |= out.at(i, j) != ds.at(i, j);
    changed += diff;
  }
  EXPECT_EQ(changed, 3);
}

TEST(Perturb, GaussianNoiseVariance) {
  std::vector<double> zeros(10000, 0.0);
  std::vector<double> labels(10000, 0.0);
  labels[0] = 1.0;
  const Dataset ds = OneColumn(zeros, labels);
  PerturbationSpec spec;
  spec.sigma2 = 0.4;
  spec.seed = 11;
  const Dataset out = Perturb(ds, spec);
  double mean = 0, var = 0;
  for (double v : out.values()) mean += v;
  mean /= 10000.0;
  for (double v : out.values()) var += (v - mean) * (v - mean);
  var /= 9999.0;
  EXPECT_GE(var, 0.36);
  EXPECT_LE(var, 0.44);
}

TEST(Perturb, SeededAndCovariateOnly) {
  const Dataset ds = testing::RandomClassification(40, 4, 8);
  for (auto kind : {PerturbationKind::kGaussian, PerturbationKind::kShuffle}) {
    PerturbationSpec spec;
    spec.kind = kind;
    spec.sigma2 = 1.2;
    spec.fraction = 0.5;
    spec.seed = 42;
    const Dataset a = Perturb(ds, spec);
    const Dataset b = Perturb(ds, spec);
    EXPECT_EQ(a.values(), b.values());
    EXPECT_EQ(a.labels(), ds.labels());
    EXPECT_EQ(a.rows(), ds.rows());
  }
}

TEST(Perturb, RejectsInvalidSpec) {
  const Dataset ds = testing::RandomClassification(10, 2, 1);
  PerturbationSpec spec;
  spec.sigma2 = -1.0;
  EXPECT_THROW(Perturb(ds, spec), Error);
  spec.sigma2 = 0.0;
  spec.fraction = 1.5;
  EXPECT_THROW(Perturb(ds, spec), Error);
}

TEST(Dataset, RejectsInvalidShapesAndLabels) {
  EXPECT_THROW(Dataset(FeatureSchema({"a"}), {1, 2}, {0}, TaskKind::kRegression),
               Error);
  EXPECT_THROW(Dataset(FeatureSchema({"a"}), {1}, {0.5},
                       TaskKind::kBinaryClassification),
               Error);
  EXPECT_THROW(Dataset(FeatureSchema({"a"}), {NAN}, {0}, TaskKind::kRegression),
               Error);
  EXPECT_THROW(FeatureSchema({"a", "a"}), Error);
}

}  // namespace
}  // namespace rashens
