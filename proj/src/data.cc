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
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "rashens/common.h"

namespace rashens {
namespace {

constexpr const char* kStage = "data";

std::vector<std::string> SplitCsvLine(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      cells.push_back(std::move(cell));
      cell.clear();
    } else {
      cell.push_back(c);
    }
  }
  cells.push_back(std::move(cell));
  return cells;
}

std::string Trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

bool ParseDouble(const std::string& s, double* out) {
  if (s.empty()) return false;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, *out);
  return ec == std::errc() && ptr == last && std::isfinite(*out);
}

std::string EscapeCsv(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

std::string TaskKindName(TaskKind task) {
  return task == TaskKind::kBinaryClassification ? "binary-classification"
                                                 : "regression";
}

TaskKind ParseTaskKind(const std::string& name) {
  if (name == "binary-classification" || name == "classification") {
    return TaskKind::kBinaryClassification;
  }
  if (name == "regression") return TaskKind::kRegression;
  throw Error(kStage, "unknown task kind '" + name + "'");
}

FeatureSchema::FeatureSchema(std::vector<std::string> names)
    : names_(std::move(names)) {
  if (names_.empty()) throw Error(kStage, "feature schema is empty");
  std::unordered_set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) {
      throw Error(kStage, "duplicate feature name '" + n + "'");
    }
  }
}

int FeatureSchema::IndexOf(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  return it == names_.end() ? -1 : static_cast<int>(it - names_.begin());
}

Dataset::Dataset(FeatureSchema schema, std::vector<double> values,
                 std::vector<double> labels, TaskKind task)
    : schema_(std::move(schema)),
      values_(std::move(values)),
      labels_(std::move(labels)),
      task_(task) {
  if (schema_.size() == 0) throw Error(kStage, "dataset has no features");
  if (values_.size() != labels_.size() * schema_.size()) {
    throw Error(kStage, "row count does not match label count");
  }
  for (double v : values_) {
    if (!std::isfinite(v)) throw Error(kStage, "non-finite feature value");
  }
  for (double y : labels_) {
    if (!std::isfinite(y)) throw Error(kStage, "non-finite label");
    if (task_ == TaskKind::kBinaryClassification && y != 0.0 && y != 1.0) {
      throw Error(kStage, "binary classification labels must be 0 or 1");
    }
  }
}

std::size_t Dataset::CountPositive() const {
  return static_cast<std::size_t>(
      std::count(labels_.begin(), labels_.end(), 1.0));
}

Dataset Dataset::SelectRows(std::span<const std::size_t> indices) const {
  std::vector<double> values;
  std::vector<double> labels;
  values.reserve(indices.size() * cols());
  labels.reserve(indices.size());
  for (std::size_t i : indices) {
    const auto r = row(i);
    values.insert(values.end(), r.begin(), r.end());
    labels.push_back(labels_[i]);
  }
  return Dataset(schema_, std::move(values), std::move(labels), task_);
}

Dataset Dataset::Concat(const Dataset& a, const Dataset& b) {
  if (!(a.schema() == b.schema()) || a.task() != b.task()) {
    throw Error(kStage, "cannot concatenate datasets with different schemas");
  }
  std::vector<double> values = a.values();
  values.insert(values.end(), b.values().begin(), b.values().end());
  std::vector<double> labels = a.labels();
  labels.insert(labels.end(), b.labels().begin(), b.labels().end());
  return Dataset(a.schema(), std::move(values), std::move(labels), a.task());
}

Dataset LoadCsv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw Error(kStage, "cannot open file '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw Error(kStage, "missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) {
    line.erase(0, 3);
  }
  std::vector<std::string> header = SplitCsvLine(line);
  for (auto& h : header) h = Trim(h);

  const auto target_it =
      std::find(header.begin(), header.end(), options.target_column);
  if (target_it == header.end()) {
    throw Error(kStage, "target column not found: '" + options.target_column +
                            "'");
  }
  const std::size_t target = target_it - header.begin();

  std::vector<std::vector<std::string>> cells;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    auto row = SplitCsvLine(line);
    if (row.size() != header.size()) {
      throw Error(kStage, "line " + std::to_string(line_no) + " has " +
                              std::to_string(row.size()) + " cells, expected " +
                              std::to_string(header.size()));
    }
    for (std::size_t j = 0; j < row.size(); ++j) {
      row[j] = Trim(row[j]);
      if (row[j].empty() || row[j] == "?" || row[j] == "NA" ||
          row[j] == "NaN" || row[j] == "nan") {
        throw Error(kStage, "missing value in column '" + header[j] +
                                "' at line " + std::to_string(line_no));
      }
    }
    cells.push_back(std::move(row));
  }
  if (cells.empty()) throw Error(kStage, "empty dataset");

  const std::set<std::string> forced(options.categorical_columns.begin(),
                                     options.categorical_columns.end());
  for (const auto& c : forced) {
    if (std::find(header.begin(), header.end(), c) == header.end()) {
      throw Error(kStage, "categorical column not found: '" + c + "'");
    }
  }

  // Per source column: either one numeric feature or one indicator per
  // category.
  struct Column {
    bool categorical = false;
    std::vector<std::string> categories;
  };
  std::vector<Column> columns(header.size());
  std::vector<std::string> names;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (j == target) continue;
    double unused;
    Column& col = columns[j];
    col.categorical = forced.count(header[j]) > 0 ||
                      !ParseDouble(cells.front()[j], &unused);
    if (col.categorical) {
      std::set<std::string> cats;
      for (const auto& row : cells) cats.insert(row[j]);
      col.categories.assign(cats.begin(), cats.end());
      for (const auto& c : col.categories) names.push_back(header[j] + "=" + c);
    } else {
      names.push_back(header[j]);
    }
  }
  if (names.empty()) throw Error(kStage, "no feature columns besides target");

  std::vector<double> values;
  std::vector<double> labels;
  values.reserve(cells.size() * names.size());
  labels.reserve(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto& row = cells[i];
    for (std::size_t j = 0; j < row.size(); ++j) {
      if (j == target) continue;
      const Column& col = columns[j];
      if (col.categorical) {
        for (const auto& c : col.categories) {
          values.push_back(row[j] == c ? 1.0 : 0.0);
        }
      } else {
        double v;
        if (!ParseDouble(row[j], &v)) {
          throw Error(kStage, "non-numeric cell '" + row[j] +
                                  "' in numeric column '" + header[j] +
                                  "' at line " + std::to_string(i + 2));
        }
        values.push_back(v);
      }
    }
    double y;
    if (!ParseDouble(row[target], &y)) {
      throw Error(kStage, "non-numeric target '" + row[target] + "' at line " +
                              std::to_string(i + 2));
    }
    labels.push_back(y);
  }
  return Dataset(FeatureSchema(std::move(names)), std::move(values),
                 std::move(labels), options.task);
}

void WriteCsv(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(kStage, "cannot write '" + path.string() + "'");
  for (const auto& n : dataset.schema().names()) out << EscapeCsv(n) << ',';
  out << "target\n";
  for (std::size_t i = 0; i < dataset.rows(); ++i) {
    for (double v : dataset.row(i)) out << FormatDouble(v) << ',';
    out << FormatDouble(dataset.labels()[i]) << '\n';
  }
}

std::pair<Dataset, Dataset> Split(const Dataset& dataset, double train_fraction,
                                  uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error(kStage, "train fraction must lie in (0, 1)");
  }
  const std::size_t n = dataset.rows();
  const auto total_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(n) * train_fraction + 1e-9));

  std::vector<std::vector<std::size_t>> groups;
  if (dataset.task() == TaskKind::kBinaryClassification) {
    groups.resize(2);
    for (std::size_t i = 0; i < n; ++i) {
      groups[dataset.labels()[i] == 1.0 ? 1 : 0].push_back(i);
    }
  } else {
    groups.resize(1);
    groups[0].resize(n);
    std::iota(groups[0].begin(), groups[0].end(), 0);
  }

  // Largest-remainder quota allocation so the quotas sum to total_train.
  std::vector<std::size_t> quota(groups.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const double exact = static_cast<double>(groups[g].size()) * train_fraction;
    quota[g] = std::min(groups[g].size(),
                        static_cast<std::size_t>(std::floor(exact + 1e-9)));
    assigned += quota[g];
    remainders.emplace_back(exact - static_cast<double>(quota[g]), g);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < total_train && r < remainders.size(); ++r) {
    const std::size_t g = remainders[r].second;
    if (quota[g] < groups[g].size()) {
      ++quota[g];
      ++assigned;
    }
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> test_idx;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    auto& idx = groups[g];
    if (dataset.task() == TaskKind::kBinaryClassification &&
        (quota[g] == 0 || quota[g] == idx.size())) {
      throw Error(kStage, "split would leave class " + std::to_string(g) +
                              " absent from one side");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    train_idx.insert(train_idx.end(), idx.begin(), idx.begin() + quota[g]);
    test_idx.insert(test_idx.end(), idx.begin() + quota[g], idx.end());
  }
  if (train_idx.empty() || test_idx.empty()) {
    throw Error(kStage, "split would leave one side empty");
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {dataset.SelectRows(train_idx), dataset.SelectRows(test_idx)};
}

ScalerParams FitScaler(const Dataset& train) {
  if (train.empty()) throw Error(kStage, "cannot standardize an empty dataset");
  const std::size_t d = train.cols();
  const double n = static_cast<double>(train.rows());
  ScalerParams p;
  p.mean.assign(d, 0.0);
  p.stddev.assign(d, 0.0);
  p.constant.assign(d, false);
  for (std::size_t i = 0; i < train.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) p.mean[j] += train.at(i, j);
  }
  for (double& m : p.mean) m /= n;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double c = train.at(i, j) - p.mean[j];
      p.stddev[j] += c * c;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    p.stddev[j] = std::sqrt(p.stddev[j] / n);
    bool all_equal = true;
    for (std::size_t i = 1; i < train.rows() && all_equal; ++i) {
      all_equal = train.at(i, j) == train.at(0, j);
    }
    p.constant[j] = all_equal || p.stddev[j] == 0.0;
  }
  return p;
}

Dataset ScalerParams::Apply(const Dataset& dataset) const {
  const std::size_t d = dataset.cols();
  if (d != mean.size()) throw Error(kStage, "scaler dimension mismatch");
  std::vector<double> values(dataset.values());
  for (std::size_t i = 0; i < dataset.rows(); ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      double& v = values[i * d + j];
      v = constant[j] ? 0.0 : (v - mean[j]) / stddev[j];
    }
  }
  return Dataset(dataset.schema(), std::move(values), dataset.labels(),
                 dataset.task());
}

StandardizeResult Standardize(const Dataset& train,
                              const std::vector<Dataset>& others) {
  StandardizeResult result;
  result.params = FitScaler(train);
  result.train = result.params.Apply(train);
  for (const auto& o : others) result.others.push_back(result.params.Apply(o));
  return result;
}

std::string PerturbationKindName(PerturbationKind kind) {
  return kind == PerturbationKind::kGaussian ? "gaussian" : "shuffle";
}

PerturbationKind ParsePerturbationKind(const std::string& name) {
  if (name == "gaussian") return PerturbationKind::kGaussian;
  if (name == "shuffle") return PerturbationKind::kShuffle;
  throw Error(kStage, "unknown perturbation kind '" + name + "'");
}

void PerturbationSpec::Validate() const {
  if (!(sigma2 >= 0.0)) throw Error(kStage, "sigma2 must be non-negative");
  if (!(fraction >= 0.0 && fraction <= 1.0)) {
    throw Error(kStage, "shuffle fraction must lie in [0, 1]");
  }
}

Dataset Perturb(const Dataset& dataset, const PerturbationSpec& spec) {
  spec.Validate();
  std::vector<double> values(dataset.values());
  std::mt19937_64 rng(spec.seed);
  const std::size_t d = dataset.cols();
  const std::size_t n = dataset.rows();

  if (spec.kind == PerturbationKind::kGaussian) {
    if (spec.sigma2 > 0.0) {
      std::normal_distribution<double> noise(0.0, std::sqrt(spec.sigma2));
      for (double& v : values) v += noise(rng);
    }
  } else {
    const auto count = static_cast<std::size_t>(
        std::ceil(spec.fraction * static_cast<double>(d) - 1e-9));
    std::vector<std::size_t> cols(d);
    std::iota(cols.begin(), cols.end(), 0);
    std::shuffle(cols.begin(), cols.end(), rng);
    cols.resize(std::min(count, d));
    std::sort(cols.begin(), cols.end());
    std::vector<std::size_t> perm(n);
    for (std::size_t j : cols) {
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), rng);
      for (std::size_t i = 0; i < n; ++i) {
        values[i * d + j] = dataset.at(perm[i], j);
      }
    }
  }
  return Dataset(dataset.schema(), std::move(values), dataset.labels(),
                 dataset.task());
}

}  // namespace rashens
