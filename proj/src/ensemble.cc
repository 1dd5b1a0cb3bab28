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

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <tbb/parallel_for.h>

#include "rashens/common.h"
#include "rashens/metrics.h"

namespace rashens {
namespace {

constexpr const char* kStage = "ensemble";

double XLog2X(double x, double m) { return x > 0 ? x * std::log2(x / m) : 0.0; }

double Sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

double Logit(double p, double clip) {
  p = std::clamp(p, clip, 1.0 - clip);
  return std::log(p / (1.0 - p));
}

struct MeanStd {
  double mean = 0.0, std = 0.0;
};

MeanStd Summarize(const std::vector<double>& v) {
  MeanStd r;
  if (v.empty()) return r;
  r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0;
  for (double x : v) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(v.size()));
  return r;
}

// Row means of max(r, 1 - r) over voting ratios, or of c_v for regression.
double MeanAgreement(const Ensemble& e, const std::vector<std::vector<double>>& preds,
                     std::size_t rows) {
  double total = 0;
  std::size_t counted = 0;
  std::vector<double> outs(preds.size());
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t c = 0; c < preds.size(); ++c) outs[c] = preds[c][i];
    if (e.task == TaskKind::kBinaryClassification) {
      double pos = 0;
      for (double o : outs) pos += o >= e.vote_threshold;
      const double r = pos / static_cast<double>(outs.size());
      total += std::max(r, 1.0 - r);
      ++counted;
    } else {
      const double mean = std::accumulate(outs.begin(), outs.end(), 0.0) /
                          static_cast<double>(outs.size());
      if (std::abs(mean) < 1e-12) continue;
      total += CoefficientOfVariation(outs);
      ++counted;
    }
  }
  return counted > 0 ? total / static_cast<double>(counted) : 0.0;
}

std::vector<double> Combine(const Ensemble& e, const std::vector<std::vector<double>>& preds,
                            std::size_t rows) {
  std::vector<double> out(rows, 0.0);
  const double n = static_cast<double>(preds.size());
  for (std::size_t i = 0; i < rows; ++i) {
    if (e.combiner == CombinerKind::kStacking) {
      double z = e.stacking.intercept;
      for (std::size_t c = 0; c < preds.size(); ++c) {
        z += e.stacking.weights[c] * Logit(preds[c][i], e.stacking.clip);
      }
      out[i] = Sigmoid(z);
    } else if (e.task == TaskKind::kBinaryClassification) {
      double pos = 0;
      for (const auto& p : preds) pos += p[i] >= e.vote_threshold;
      out[i] = pos / n;
    } else {
      double s = 0;
      for (const auto& p : preds) s += p[i];
      out[i] = s / n;
    }
  }
  return out;
}

}  // namespace

double Jsd(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) {
    throw Error(kStage, "JSD needs two distributions over the same support");
  }
  double sp = 0, sq = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0 || q[i] < 0) throw Error(kStage, "JSD inputs must be non-negative");
    sp += p[i];
    sq += q[i];
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) {
    throw Error(kStage, "JSD inputs must each sum to 1");
  }
  double div = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double m = 0.5 * (p[i] + q[i]);
    div += 0.5 * XLog2X(p[i], m) + 0.5 * XLog2X(q[i], m);
  }
  return std::sqrt(std::clamp(div, 0.0, 1.0));
}

double BernoulliJsd(double p, double q) {
  if (p == q) return 0.0;
  const double m1 = 0.5 * (p + q);
  const double m0 = 1.0 - m1;
  const double div = 0.5 * (XLog2X(p, m1) + XLog2X(1 - p, m0)) +
                     0.5 * (XLog2X(q, m1) + XLog2X(1 - q, m0));
  return std::sqrt(std::clamp(div, 0.0, 1.0));
}

double MeanBernoulliJsd(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(kStage, "prediction vectors differ in length");
  if (a.empty()) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += BernoulliJsd(a[i], b[i]);
  return s / static_cast<double>(a.size());
}

std::vector<std::vector<double>> PairwiseJsd(
    const std::vector<std::vector<double>>& predictions) {
  const std::size_t n = predictions.size();
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      out[i][j] = out[j][i] = MeanBernoulliJsd(predictions[i], predictions[j]);
    }
  }
  return out;
}

std::vector<std::vector<double>> PairwiseJsd(const std::vector<const Tree*>& models,
                                             const Dataset& dataset) {
  if (models.size() < 2) throw Error(kStage, "pairwise JSD needs at least two models");
  if (dataset.task() != TaskKind::kBinaryClassification) {
    throw Error(kStage, "pairwise JSD is defined for classification outputs");
  }
  std::vector<std::vector<double>> preds;
  for (const Tree* t : models) preds.push_back(t->PredictAll(dataset));
  return PairwiseJsd(preds);
}

double MeanOffDiagonal(const std::vector<std::vector<double>>& matrix) {
  const std::size_t n = matrix.size();
  if (n < 2) return 0.0;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) s += matrix[i][j];
  }
  return s / (static_cast<double>(n * (n - 1)) / 2.0);
}

double CoefficientOfVariation(std::span<const double> values) {
  if (values.empty()) throw Error(kStage, "c_v of an empty set");
  const double n = static_cast<double>(values.size());
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  if (std::abs(mean) < 1e-12) throw Error(kStage, "c_v is undefined for a zero mean");
  double ss = 0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / n) / std::abs(mean);
}

void Ensemble::Validate() const {
  if (constituents.empty()) throw Error(kStage, "an ensemble needs at least one constituent");
  if (combiner == CombinerKind::kStacking) {
    if (task != TaskKind::kBinaryClassification) {
      throw Error(kStage, "stacking is only defined for classification");
    }
    if (stacking.weights.size() != constituents.size()) {
      throw Error(kStage, "stacking weights do not match the constituent count");
    }
  }
}

VotingPrediction PredictVoting(const Ensemble& ensemble, std::span<const double> row) {
  ensemble.Validate();
  VotingPrediction out;
  AgreementReport& a = out.agreement;
  for (const auto& c : ensemble.constituents) a.outputs.push_back(c.tree.Predict(row));
  const double n = static_cast<double>(a.outputs.size());
  if (ensemble.task == TaskKind::kBinaryClassification) {
    double pos = 0;
    for (double o : a.outputs) pos += o >= ensemble.vote_threshold;
    a.voting_ratio = pos / n;
    out.prediction = a.voting_ratio;
    double jsd = 0;
    int pairs = 0;
    for (std::size_t i = 0; i < a.outputs.size(); ++i) {
      for (std::size_t j = i + 1; j < a.outputs.size(); ++j, ++pairs) {
        jsd += BernoulliJsd(a.outputs[i], a.outputs[j]);
      }
    }
    a.mean_jsd = pairs > 0 ? jsd / pairs : 0.0;
  } else {
    out.prediction = std::accumulate(a.outputs.begin(), a.outputs.end(), 0.0) / n;
    a.c_v = CoefficientOfVariation(a.outputs);
  }
  return out;
}

std::vector<std::vector<double>> ConstituentPredictions(const Ensemble& ensemble,
                                                        const Dataset& dataset) {
  std::vector<std::vector<double>> preds;
  preds.reserve(ensemble.constituents.size());
  for (const auto& c : ensemble.constituents) preds.push_back(c.tree.PredictAll(dataset));
  return preds;
}

std::vector<double> PredictAll(const Ensemble& ensemble, const Dataset& dataset) {
  ensemble.Validate();
  return Combine(ensemble, ConstituentPredictions(ensemble, dataset), dataset.rows());
}

Ensemble FitStacking(const std::vector<CandidateModel>& constituents,
                     const Dataset& train, const TreeParams& params, uint64_t seed,
                     const StackingOptions& options) {
  if (constituents.empty()) throw Error(kStage, "stacking needs at least one constituent");
  if (train.task() != TaskKind::kBinaryClassification) {
    throw Error(kStage, "stacking is only defined for classification");
  }
  if (options.folds < 2) throw Error(kStage, "stacking needs at least 2 folds");

  // Stratified fold assignment: each class is shuffled and dealt round-robin.
  const std::size_t n = train.rows();
  std::vector<int> fold(n);
  std::mt19937_64 rng(seed);
  for (double cls : {0.0, 1.0}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) {
      if (train.labels()[i] == cls) idx.push_back(i);
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t r = 0; r < idx.size(); ++r) fold[idx[r]] = static_cast<int>(r % options.folds);
  }

  const std::size_t m = constituents.size();
  std::vector<std::vector<double>> features(m, std::vector<double>(n, 0.0));
  for (int f = 0; f < options.folds; ++f) {
    std::vector<std::size_t> in, out;
    for (std::size_t i = 0; i < n; ++i) (fold[i] == f ? out : in).push_back(i);
    const Dataset fit = train.SelectRows(in);
    const Dataset held = train.SelectRows(out);
    const std::size_t pos = fit.CountPositive();
    if (pos == 0 || pos == fit.rows() || out.empty()) {
      throw Error(kStage, "stacking fold " + std::to_string(f) + " has a single class");
    }
    tbb::parallel_for(std::size_t{0}, m, [&](std::size_t c) {
      const Tree t = FitTree(fit, constituents[c].subset, params);
      for (std::size_t r = 0; r < out.size(); ++r) {
        features[c][out[r]] = Logit(t.Predict(held.row(r)), options.clip);
      }
    });
  }

  // Step size 1/L with L bounding the Lipschitz constant of the gradient.
  double trace = 1.0;
  for (const auto& col : features) {
    for (double v : col) trace += v * v / static_cast<double>(n);
  }
  const double step = 1.0 / (0.25 * trace + options.l2);
  std::vector<double> w(m, 0.0);
  double b = 0.0;
  std::vector<double> grad(m);
  for (int it = 0; it < options.iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double z = b;
      for (std::size_t c = 0; c < m; ++c) z += w[c] * features[c][i];
      const double r = Sigmoid(z) - train.labels()[i];
      grad_b += r;
      for (std::size_t c = 0; c < m; ++c) grad[c] += r * features[c][i];
    }
    b -= step * grad_b / static_cast<double>(n);
    for (std::size_t c = 0; c < m; ++c) {
      w[c] -= step * (grad[c] / static_cast<double>(n) + options.l2 * w[c]);
    }
  }

  Ensemble e;
  e.constituents = constituents;
  e.combiner = CombinerKind::kStacking;
  e.stacking = {w, b, options.clip};
  e.task = TaskKind::kBinaryClassification;
  return e;
}

std::vector<RiskBucket> RiskStratify(const Ensemble& ensemble, const Dataset& dataset,
                                     int bins) {
  ensemble.Validate();
  if (ensemble.task != TaskKind::kBinaryClassification) {
    throw Error(kStage, "risk stratification needs a classification ensemble");
  }
  if (dataset.empty()) throw Error(kStage, "risk stratification of an empty dataset");
  if (bins < 1) throw Error(kStage, "bins must be >= 1");
  Ensemble voting = ensemble;
  voting.combiner = CombinerKind::kVoting;
  const auto ratio = PredictAll(voting, dataset);

  std::vector<RiskBucket> out(bins);
  const double width = 0.5 / bins;
  for (int b = 0; b < bins; ++b) {
    out[b].lower = 0.5 + b * width;
    out[b].upper = b + 1 == bins ? 1.0 : 0.5 + (b + 1) * width;
  }
  for (std::size_t i = 0; i < dataset.rows(); ++i) {
    const double agreement = std::max(ratio[i], 1.0 - ratio[i]);
    const int b = std::min(bins - 1, static_cast<int>(std::floor((agreement - 0.5) / width)));
    const double vote = ratio[i] >= 0.5 ? 1.0 : 0.0;
    ++out[b].count;
    out[b].correct += vote == dataset.labels()[i];
  }
  for (auto& b : out) {
    b.accuracy = b.count > 0 ? static_cast<double>(b.correct) / b.count
                             : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

std::pair<const RiskBucket*, const RiskBucket*> ExtremeBuckets(
    const std::vector<RiskBucket>& buckets) {
  const RiskBucket* low = nullptr;
  const RiskBucket* high = nullptr;
  for (const auto& b : buckets) {
    if (b.count == 0) continue;
    if (low == nullptr) low = &b;
    high = &b;
  }
  return {low, high};
}

DriftReport DriftExperiment(const Ensemble& ensemble, const Dataset& test,
                            const std::vector<double>& levels, PerturbationKind kind,
                            uint64_t seed, int repeats) {
  ensemble.Validate();
  if (repeats < 1) throw Error(kStage, "repeats must be >= 1");
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (!(levels[i] > levels[i - 1])) throw Error(kStage, "drift levels must be strictly increasing");
  }
  DriftReport report;
  report.kind = kind;
  report.repeats = repeats;
  report.rows.resize(levels.size());

  const std::size_t cells = levels.size() * static_cast<std::size_t>(repeats);
  std::vector<double> loss(cells), jsd(cells), agree(cells), acc(cells);
  tbb::parallel_for(std::size_t{0}, cells, [&](std::size_t cell) {
    const std::size_t li = cell / repeats;
    const int r = static_cast<int>(cell % repeats);
    PerturbationSpec spec;
    spec.kind = kind;
    (kind == PerturbationKind::kGaussian ? spec.sigma2 : spec.fraction) = levels[li];
    // The same noise stream at every level, so levels differ only in scale.
    spec.seed = DeriveSeed(seed, static_cast<uint64_t>(r));
    const Dataset drifted = Perturb(test, spec);
    const auto preds = ConstituentPredictions(ensemble, drifted);
    const auto out = Combine(ensemble, preds, drifted.rows());
    const LossReport lr = EvaluatePredictions(out, drifted);
    loss[cell] = lr.loss;
    acc[cell] = lr.accuracy;
    jsd[cell] = ensemble.task == TaskKind::kBinaryClassification
                    ? MeanOffDiagonal(PairwiseJsd(preds))
                    : 0.0;
    agree[cell] = MeanAgreement(ensemble, preds, drifted.rows());
  });

  for (std::size_t li = 0; li < levels.size(); ++li) {
    const auto slice = [&](const std::vector<double>& v) {
      return Summarize(std::vector<double>(v.begin() + li * repeats, v.begin() + (li + 1) * repeats));
    };
    DriftRow& row = report.rows[li];
    row.level = levels[li];
    std::tie(row.loss_mean, row.loss_std) = std::pair{slice(loss).mean, slice(loss).std};
    std::tie(row.jsd_mean, row.jsd_std) = std::pair{slice(jsd).mean, slice(jsd).std};
    std::tie(row.agreement_mean, row.agreement_std) = std::pair{slice(agree).mean, slice(agree).std};
    std::tie(row.accuracy_mean, row.accuracy_std) = std::pair{slice(acc).mean, slice(acc).std};
  }
  return report;
}

double CosineSimilarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(kStage, "cosine of vectors with different lengths");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / std::sqrt(na * nb);
}

double Jaccard(const std::vector<bool>& a, const std::vector<bool>& b) {
  if (a.size() != b.size()) throw Error(kStage, "Jaccard of sets over different rows");
  std::size_t both = 0, either = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    both += a[i] && b[i];
    either += a[i] || b[i];
  }
  return either == 0 ? 1.0 : static_cast<double>(both) / static_cast<double>(either);
}

SimilarityReport CompareToReference(const Ensemble& ensemble, const Tree& reference,
                                    const ExplanationVector& reference_explanation,
                                    const Dataset& dataset) {
  if (dataset.task() != TaskKind::kBinaryClassification) {
    throw Error(kStage, "similarity report needs a classification task");
  }
  const auto ens = PredictAll(ensemble, dataset);
  const auto ref = reference.PredictAll(dataset);
  std::vector<bool> a(dataset.rows()), b(dataset.rows());
  for (std::size_t i = 0; i < dataset.rows(); ++i) {
    a[i] = ens[i] >= 0.5;
    b[i] = ref[i] >= 0.5;
  }
  std::vector<double> mean(reference_explanation.values.size(), 0.0);
  for (const auto& c : ensemble.constituents) {
    if (c.explanation.values.size() != mean.size()) {
      throw Error(kStage, "constituent explanation has the wrong length");
    }
    for (std::size_t j = 0; j < mean.size(); ++j) {
      mean[j] += c.explanation.values[j] / static_cast<double>(ensemble.constituents.size());
    }
  }
  return {Jaccard(a, b), CosineSimilarity(mean, reference_explanation.values)};
}

nlohmann::json ToJson(const Ensemble& ensemble) {
  nlohmann::json constituents = nlohmann::json::array();
  for (const auto& c : ensemble.constituents) constituents.push_back(ToJson(c));
  nlohmann::json j = {
      {"combiner", ensemble.combiner == CombinerKind::kVoting ? "voting" : "stacking"},
      {"task", TaskKindName(ensemble.task)},
      {"vote_threshold", ensemble.vote_threshold},
      {"constituents", constituents}};
  if (ensemble.combiner == CombinerKind::kStacking) {
    j["stacking"] = {{"weights", ensemble.stacking.weights},
                     {"intercept", ensemble.stacking.intercept},
                     {"clip", ensemble.stacking.clip}};
  }
  return j;
}

Ensemble EnsembleFromJson(const nlohmann::json& j) {
  Ensemble e;
  const std::string combiner = j.at("combiner").get<std::string>();
  if (combiner == "voting") {
    e.combiner = CombinerKind::kVoting;
  } else if (combiner == "stacking") {
    e.combiner = CombinerKind::kStacking;
    e.stacking.weights = j.at("stacking").at("weights").get<std::vector<double>>();
    e.stacking.intercept = j.at("stacking").at("intercept").get<double>();
    e.stacking.clip = j.at("stacking").value("clip", 1e-3);
  } else {
    throw Error(kStage, "unknown combiner '" + combiner + "'");
  }
  e.task = ParseTaskKind(j.at("task").get<std::string>());
  e.vote_threshold = j.value("vote_threshold", 0.5);
  for (const auto& c : j.at("constituents")) e.constituents.push_back(CandidateModelFromJson(c));
  e.Validate();
  return e;
}

nlohmann::json ToJson(const std::vector<RiskBucket>& buckets) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : buckets) {
    out.push_back({{"lower", b.lower},
                   {"upper", b.upper},
                   {"count", b.count},
                   {"correct", b.correct},
                   {"accuracy", b.count > 0 ? nlohmann::json(b.accuracy) : nlohmann::json(nullptr)}});
  }
  return out;
}

nlohmann::json ToJson(const DriftReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows) {
    rows.push_back({{"level", r.level},
                    {"loss_mean", r.loss_mean},
                    {"loss_std", r.loss_std},
                    {"jsd_mean", r.jsd_mean},
                    {"jsd_std", r.jsd_std},
                    {"agreement_mean", r.agreement_mean},
                    {"agreement_std", r.agreement_std},
                    {"accuracy_mean", r.accuracy_mean},
                    {"accuracy_std", r.accuracy_std}});
  }
  return {{"kind", PerturbationKindName(report.kind)},
          {"repeats", report.repeats},
          {"spread", "population std over repeats"},
          {"rows", rows}};
}

void WriteDriftCsv(const std::filesystem::path& path, const DriftReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(kStage, "cannot write " + path.string());
  out << "level,loss_mean,loss_std,jsd_mean,jsd_std,agreement_mean,agreement_std,"
         "accuracy_mean,accuracy_std\n";
  for (const auto& r : report.rows) {
    out << FormatDouble(r.level) << ',' << FormatDouble(r.loss_mean) << ','
        << FormatDouble(r.loss_std) << ',' << FormatDouble(r.jsd_mean) << ','
        << FormatDouble(r.jsd_std) << ',' << FormatDouble(r.agreement_mean) << ','
        << FormatDouble(r.agreement_std) << ',' << FormatDouble(r.accuracy_mean) << ','
        << FormatDouble(r.accuracy_std) << '\n';
  }
}

void WriteDriftGnuplot(const std::filesystem::path& path, const DriftReport& report) {
  std::ofstream out(path);
  if (!out) throw Error(kStage, "cannot write " + path.string());
  out << "# " << PerturbationKindName(report.kind) << ", " << report.repeats
      << " repeats, mean and population std\n";
  out << "# level loss_mean loss_std jsd_mean jsd_std agreement_mean agreement_std "
         "accuracy_mean accuracy_std\n";
  for (const auto& r : report.rows) {
    out << FormatDouble(r.level) << ' ' << FormatDouble(r.loss_mean) << ' '
        << FormatDouble(r.loss_std) << ' ' << FormatDouble(r.jsd_mean) << ' '
        << FormatDouble(r.jsd_std) << ' ' << FormatDouble(r.agreement_mean) << ' '
        << FormatDouble(r.agreement_std) << ' ' << FormatDouble(r.accuracy_mean) << ' '
        << FormatDouble(r.accuracy_std) << '\n';
  }
}

void WriteRiskCsv(const std::filesystem::path& path, const std::vector<RiskBucket>& buckets) {
  std::ofstream out(path);
  if (!out) throw Error(kStage, "cannot write " + path.string());
  out << "lower,upper,count,correct,accuracy\n";
  for (const auto& b : buckets) {
    out << FormatDouble(b.lower) << ',' << FormatDouble(b.upper) << ',' << b.count << ','
        << b.correct << ',' << (b.count > 0 ? FormatDouble(b.accuracy) : "") << '\n';
  }
}

}  // namespace rashens
