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

#ifndef RASHENS_DATA_H_
#define RASHENS_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rashens {

enum class TaskKind { kBinaryClassification, kRegression };

std::string TaskKindName(TaskKind task);
TaskKind ParseTaskKind(const std::string& name);

// Ordered, unique feature names.
class FeatureSchema {
 public:
  FeatureSchema() = default;
  explicit FeatureSchema(std::vector<std::string> names);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  // Returns -1 when absent.
  int IndexOf(const std::string& name) const;

  bool operator==(const FeatureSchema&) const = default;

 private:
  std::vector<std::string> names_;
};

// Immutable tabular dataset: row-major feature matrix plus targets.
class Dataset {
 public:
  Dataset() = default;
  // Validates every invariant (shape, finiteness, binary labels).
  Dataset(FeatureSchema schema, std::vector<double> values,
          std::vector<double> labels, TaskKind task);

  std::size_t rows() const { return labels_.size(); }
  std::size_t cols() const { return schema_.size(); }
  bool empty() const { return labels_.empty(); }

  std::span<const double> row(std::size_t i) const {
    return {values_.data() + i * cols(), cols()};
  }
  double at(std::size_t i, std::size_t j) const {
    return values_[i * cols() + j];
  }
  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& labels() const { return labels_; }
  const FeatureSchema& schema() const { return schema_; }
  TaskKind task() const { return task_; }

  std::size_t CountPositive() const;
  Dataset SelectRows(std::span<const std::size_t> indices) const;
  // Row-concatenation; schemas and tasks must match.
  static Dataset Concat(const Dataset& a, const Dataset& b);

 private:
  FeatureSchema schema_;
  std::vector<double> values_;
  std::vector<double> labels_;
  TaskKind task_ = TaskKind::kBinaryClassification;
};

struct CsvOptions {
  std::string target_column;
  TaskKind task = TaskKind::kBinaryClassification;
  // Columns forced to one-hot encoding. A column whose first data cell does
  // not parse as a number is treated as categorical as well.
  std::vector<std::string> categorical_columns;
};

// Reads a header-first, comma separated file. Categorical columns are one-hot
// encoded as "<column>=<category>" with categories in lexicographic order.
Dataset LoadCsv(const std::filesystem::path& path, const CsvOptions& options);

// Writes features followed by a "target" column. Values use the shortest
// round-trip representation so a reload is bit-exact.
void WriteCsv(const Dataset& dataset, const std::filesystem::path& path);

// Stratified (classification) or plain shuffled (regression) split.
// floor(n * train_fraction) rows go to the first dataset; per-class quotas
// are allocated by largest remainder.
std::pair<Dataset, Dataset> Split(const Dataset& dataset, double train_fraction,
                                  uint64_t seed);

struct ScalerParams {
  std::vector<double> mean;
  std::vector<double> stddev;  // population standard deviation
  std::vector<bool> constant;

  Dataset Apply(const Dataset& dataset) const;
};

ScalerParams FitScaler(const Dataset& train);

struct StandardizeResult {
  Dataset train;
  std::vector<Dataset> others;
  ScalerParams params;
};

StandardizeResult Standardize(const Dataset& train,
                              const std::vector<Dataset>& others);

enum class PerturbationKind { kGaussian, kShuffle };

std::string PerturbationKindName(PerturbationKind kind);
PerturbationKind ParsePerturbationKind(const std::string& name);

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kGaussian;
  double sigma2 = 0.0;    // additive noise variance, standardized units
  double fraction = 0.0;  // share of columns shuffled
  uint64_t seed = 0;

  void Validate() const;
};

// Covariate-only perturbation: labels and row count are never touched.
Dataset Perturb(const Dataset& dataset, const PerturbationSpec& spec);

}  // namespace rashens

#endif  // RASHENS_DATA_H_
