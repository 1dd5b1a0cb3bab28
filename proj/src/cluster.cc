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

#include "rashens/cluster.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <tuple>

#include <Eigen/Dense>
#include <tbb/parallel_for.h>

#include "rashens/common.h"

namespace rashens {
namespace {

constexpr const char* kStage = "cluster";

double SquaredDistance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

void CheckPoints(const Points& points) {
  if (points.empty()) throw Error(kStage, "no points to cluster");
  const std::size_t d = points.front().size();
  for (const auto& p : points) {
    if (p.size() != d) throw Error(kStage, "points have inconsistent dimension");
  }
}

// Distinct rows with multiplicities. `unit_of[i]` maps input position i to
// its distinct row; distinct rows are ordered by first occurrence.
struct WeightedPoints {
  Points points;
  std::vector<double> weights;
  std::vector<int> unit_of;
};

WeightedPoints Deduplicate(const Points& points) {
  WeightedPoints out;
  std::map<std::vector<double>, int> index;
  out.unit_of.reserve(points.size());
  for (const auto& p : points) {
    auto [it, inserted] = index.emplace(p, static_cast<int>(out.points.size()));
    if (inserted) {
      out.points.push_back(p);
      out.weights.push_back(0.0);
    }
    out.weights[it->second] += 1.0;
    out.unit_of.push_back(it->second);
  }
  return out;
}

// Index i with cumulative weight first exceeding u * total.
std::size_t WeightedPick(const std::vector<double>& w, std::mt19937_64& rng) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  const double target = std::uniform_real_distribution<double>(0.0, total)(rng);
  double cum = 0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] <= 0) continue;
    last_positive = i;
    cum += w[i];
    if (cum > target) return i;
  }
  return last_positive;
}

// Silhouette per unit, where unit i stands for weights[i] coincident points
// in cluster labels[i].
template <typename Dist>
std::vector<double> UnitSilhouettes(const std::vector<int>& labels,
                                    const std::vector<double>& weights, int k,
                                    Dist dist) {
  const std::size_t n = labels.size();
  std::vector<double> sizes(k, 0.0);
  for (std::size_t i = 0; i < n; ++i) sizes[labels[i]] += weights[i];
  std::vector<double> out(n, 0.0);
  std::vector<double> sums(k);
  for (std::size_t i = 0; i < n; ++i) {
    const int own = labels[i];
    if (sizes[own] <= 1.0) continue;
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) sums[labels[j]] += weights[j] * dist(i, j);
    }
    const double a = sums[own] / (sizes[own] - 1.0);
    double b = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / sizes[c]);
    }
    const double denom = std::max(a, b);
    out[i] = denom > 0 ? (b - a) / denom : 0.0;
  }
  return out;
}

int CountClusters(const std::vector<int>& assignment) {
  int k = 0;
  for (int c : assignment) {
    if (c < 0) throw Error(kStage, "negative cluster id");
    k = std::max(k, c + 1);
  }
  std::vector<bool> seen(k, false);
  for (int c : assignment) seen[c] = true;
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw Error(kStage, "cluster ids must be contiguous with no empty cluster");
  }
  return k;
}

}  // namespace

std::vector<int> ClusterModel::ClusterSizes() const {
  std::vector<int> sizes(k, 0);
  for (int c : assignment) ++sizes[c];
  return sizes;
}

std::size_t CountDistinct(const Points& points) {
  std::map<std::vector<double>, int> seen;
  for (const auto& p : points) seen.emplace(p, 0);
  return seen.size();
}

int NearestCentroid(const Points& centroids, const std::vector<double>& point) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    const double d = SquaredDistance(centroids[c], point);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

ClusterModel KMeans(const Points& points, int k, uint64_t seed,
                    const KMeansOptions& options) {
  CheckPoints(points);
  const WeightedPoints wp = Deduplicate(points);
  const std::size_t n = wp.points.size();
  const std::size_t dim = points.front().size();
  if (k < 1) throw Error(kStage, "k must be >= 1");
  if (static_cast<std::size_t>(k) > n) {
    throw Error(kStage, "k = " + std::to_string(k) + " exceeds the number of distinct points (" +
                            std::to_string(n) + ")");
  }

  // k-means++ seeding on the weighted points.
  std::mt19937_64 rng(seed);
  Points centroids;
  centroids.push_back(wp.points[WeightedPick(wp.weights, rng)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<double> pick_weight(n);
  while (static_cast<int>(centroids.size()) < k) {
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], SquaredDistance(wp.points[i], centroids.back()));
      pick_weight[i] = wp.weights[i] * d2[i];
    }
    centroids.push_back(wp.points[WeightedPick(pick_weight, rng)]);
  }

  std::vector<int> labels(n);
  const auto assign = [&] {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      const int c = NearestCentroid(centroids, wp.points[i]);
      changed |= c != labels[i];
      labels[i] = c;
    }
    return changed;
  };
  const auto inertia = [&] {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) {
      s += wp.weights[i] * SquaredDistance(wp.points[i], centroids[labels[i]]);
    }
    return s;
  };
  assign();

  int it = 0;
  while (it < options.max_iterations) {
    ++it;
    // Empty clusters take the point farthest from its centroid among
    // clusters that can spare one.
    for (;;) {
      std::vector<int> counts(k, 0);
      for (int c : labels) ++counts[c];
      const auto empty = std::find(counts.begin(), counts.end(), 0);
      if (empty == counts.end()) break;
      std::size_t far = n;
      double far_d = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[labels[i]] < 2) continue;
        const double d = SquaredDistance(wp.points[i], centroids[labels[i]]);
        if (d > far_d) {
          far_d = d;
          far = i;
        }
      }
      const int target = static_cast<int>(empty - counts.begin());
      labels[far] = target;
      centroids[target] = wp.points[far];
    }
    std::vector<double> mass(k, 0.0);
    for (auto& c : centroids) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      mass[labels[i]] += wp.weights[i];
      for (std::size_t j = 0; j < dim; ++j) {
        centroids[labels[i]][j] += wp.weights[i] * wp.points[i][j];
      }
    }
    for (int c = 0; c < k; ++c) {
      for (double& v : centroids[c]) v /= mass[c];
    }
    if (options.inertia_trace != nullptr) options.inertia_trace->push_back(inertia());
    if (!assign()) break;
  }

  ClusterModel model;
  model.k = k;
  model.inertia = inertia();
  model.centroids = std::move(centroids);
  model.iterations = it;
  model.assignment.reserve(points.size());
  for (int u : wp.unit_of) model.assignment.push_back(labels[u]);
  model.clusteroids = Clusteroids(model, points);
  return model;
}

std::vector<double> SilhouetteSamples(const Points& points,
                                      const std::vector<int>& assignment) {
  CheckPoints(points);
  if (assignment.size() != points.size()) {
    throw Error(kStage, "assignment length differs from point count");
  }
  const int k = CountClusters(assignment);
  if (k < 2) throw Error(kStage, "silhouette needs at least 2 clusters");

  // Merge coincident points that share a cluster.
  std::map<std::pair<int, std::vector<double>>, int> index;
  std::vector<const std::vector<double>*> unit_point;
  std::vector<int> labels;
  std::vector<double> weights;
  std::vector<int> unit_of;
  for (std::size_t i = 0; i < points.size(); ++i) {
    auto [it, inserted] =
        index.emplace(std::make_pair(assignment[i], points[i]), static_cast<int>(labels.size()));
    if (inserted) {
      unit_point.push_back(&points[i]);
      labels.push_back(assignment[i]);
      weights.push_back(0.0);
    }
    weights[it->second] += 1.0;
    unit_of.push_back(it->second);
  }
  const auto unit = UnitSilhouettes(labels, weights, k, [&](std::size_t i, std::size_t j) {
    return std::sqrt(SquaredDistance(*unit_point[i], *unit_point[j]));
  });
  std::vector<double> out;
  out.reserve(points.size());
  for (int u : unit_of) out.push_back(unit[u]);
  return out;
}

double Silhouette(const Points& points, const std::vector<int>& assignment) {
  const auto s = SilhouetteSamples(points, assignment);
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

std::pair<int, int> DefaultKRange(const Points& points) {
  const int n = static_cast<int>(points.size());
  const int root = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
  const int k_max = std::min({25, root, static_cast<int>(CountDistinct(points))});
  return {2, k_max};
}

ClusterModel SelectK(const Points& points, int k_min, int k_max, uint64_t seed,
                     const SelectKOptions& options) {
  CheckPoints(points);
  const std::size_t distinct = CountDistinct(points);
  if (!(2 <= k_min && k_min <= k_max && static_cast<std::size_t>(k_max) <= distinct)) {
    throw Error(kStage, "need 2 <= k_min <= k_max <= distinct points (got [" +
                            std::to_string(k_min) + ", " + std::to_string(k_max) + "], " +
                            std::to_string(distinct) + " distinct)");
  }
  if (options.restarts < 1) throw Error(kStage, "restarts must be >= 1");

  // Silhouette sample: every point when the distinct count is small enough,
  // otherwise a seeded subsample of positions.
  std::vector<int> sample(points.size());
  std::iota(sample.begin(), sample.end(), 0);
  if (distinct > options.silhouette_sample) {
    std::mt19937_64 rng(DeriveSeed(seed, 0x51));
    std::shuffle(sample.begin(), sample.end(), rng);
    sample.resize(options.silhouette_sample);
    std::sort(sample.begin(), sample.end());
  }
  Points sample_points;
  for (int i : sample) sample_points.push_back(points[i]);
  const WeightedPoints units = Deduplicate(sample_points);
  std::vector<int> unit_position(units.points.size());
  for (std::size_t s = sample.size(); s-- > 0;) unit_position[units.unit_of[s]] = sample[s];
  const std::size_t m = units.points.size();
  std::vector<float> dist(m * m, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) {
      const auto d = static_cast<float>(std::sqrt(SquaredDistance(units.points[i], units.points[j])));
      dist[i * m + j] = d;
      dist[j * m + i] = d;
    }
  }

  struct Run {
    int k, restart;
    ClusterModel model;
    double silhouette;
  };
  std::vector<Run> runs;
  for (int k = k_min; k <= k_max; ++k) {
    for (int r = 0; r < options.restarts; ++r) runs.push_back({k, r, {}, 0.0});
  }
  tbb::parallel_for(std::size_t{0}, runs.size(), [&](std::size_t idx) {
    Run& run = runs[idx];
    run.model = KMeans(points, run.k, DeriveSeed(seed, static_cast<uint64_t>(run.k) * 1000 + run.restart));
    std::vector<int> labels(m);
    for (std::size_t u = 0; u < m; ++u) labels[u] = run.model.assignment[unit_position[u]];
    int present = 0;
    std::vector<int> remap(run.k, -1);
    for (int& c : labels) {
      if (remap[c] < 0) remap[c] = present++;
      c = remap[c];
    }
    if (present < 2) {
      run.silhouette = 0.0;
      return;
    }
    const auto unit = UnitSilhouettes(labels, units.weights, present, [&](std::size_t i, std::size_t j) {
      return static_cast<double>(dist[i * m + j]);
    });
    double total = 0;
    for (std::size_t u = 0; u < m; ++u) total += units.weights[u] * unit[u];
    run.silhouette = total / static_cast<double>(sample.size());
  });

  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i) {
    // Strict improvement only, so ties keep the smaller k and earlier restart.
    if (runs[i].silhouette > runs[best].silhouette) best = i;
  }
  ClusterModel out = std::move(runs[best].model);
  out.silhouette = runs[best].silhouette;
  for (const Run& r : runs) out.evaluated.push_back({r.k, r.restart, r.silhouette});
  return out;
}

std::vector<int> Clusteroids(const ClusterModel& model, const Points& points) {
  std::vector<int> out(model.k, -1);
  std::vector<double> best(model.k, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const int c = model.assignment[i];
    const double d = SquaredDistance(points[i], model.centroids[c]);
    if (d < best[c]) {
      best[c] = d;
      out[c] = static_cast<int>(i);
    }
  }
  if (std::find(out.begin(), out.end(), -1) != out.end()) {
    throw Error(kStage, "cannot take the clusteroid of an empty cluster");
  }
  return out;
}

std::vector<std::pair<double, double>> Project2d(const Points& points) {
  CheckPoints(points);
  if (points.size() < 2) throw Error(kStage, "projection needs at least 2 points");
  const Eigen::Index n = static_cast<Eigen::Index>(points.size());
  const Eigen::Index d = static_cast<Eigen::Index>(points.front().size());
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = points[i][j];
  }
  x.rowwise() -= x.colwise().mean();
  const Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error(kStage, "eigen decomposition failed");

  // Eigenvalues ascend; take the last two columns.
  Eigen::MatrixXd axes = Eigen::MatrixXd::Zero(d, 2);
  for (int a = 0; a < 2 && a < d; ++a) {
    Eigen::VectorXd v = solver.eigenvectors().col(d - 1 - a);
    Eigen::Index arg = 0;
    for (Eigen::Index j = 1; j < d; ++j) {
      if (std::abs(v(j)) > std::abs(v(arg))) arg = j;
    }
    if (v(arg) < 0) v = -v;
    axes.col(a) = v;
  }
  const Eigen::MatrixXd proj = x * axes;
  std::vector<std::pair<double, double>> out;
  out.reserve(points.size());
  for (Eigen::Index i = 0; i < n; ++i) out.emplace_back(proj(i, 0), proj(i, 1));
  return out;
}

nlohmann::json ToJson(const ClusterModel& model) {
  nlohmann::json evaluated = nlohmann::json::array();
  for (const auto& e : model.evaluated) {
    evaluated.push_back({{"k", e.k}, {"restart", e.restart}, {"silhouette", e.silhouette}});
  }
  return {{"k", model.k},
          {"centroids", model.centroids},
          {"assignment", model.assignment},
          {"silhouette", std::isnan(model.silhouette) ? nlohmann::json(nullptr)
                                                      : nlohmann::json(model.silhouette)},
          {"clusteroids", model.clusteroids},
          {"inertia", model.inertia},
          {"iterations", model.iterations},
          {"evaluated", evaluated}};
}

ClusterModel ClusterModelFromJson(const nlohmann::json& j) {
  ClusterModel m;
  m.k = j.at("k").get<int>();
  m.centroids = j.at("centroids").get<Points>();
  m.assignment = j.at("assignment").get<std::vector<int>>();
  if (!j.at("silhouette").is_null()) m.silhouette = j.at("silhouette").get<double>();
  m.clusteroids = j.at("clusteroids").get<std::vector<int>>();
  m.inertia = j.value("inertia", 0.0);
  m.iterations = j.value("iterations", 0);
  for (const auto& e : j.value("evaluated", nlohmann::json::array())) {
    m.evaluated.push_back({e.at("k").get<int>(), e.at("restart").get<int>(),
                           e.at("silhouette").get<double>()});
  }
  if (static_cast<int>(m.centroids.size()) != m.k ||
      static_cast<int>(m.clusteroids.size()) != m.k) {
    throw Error(kStage, "cluster model has inconsistent k");
  }
  return m;
}

void WriteClusterReport(const std::filesystem::path& path,
                        const std::vector<int>& member_ids,
                        const ClusterModel& model, const Points& points) {
  if (member_ids.size() != points.size() || model.assignment.size() != points.size()) {
    throw Error(kStage, "cluster report inputs have mismatched lengths");
  }
  std::vector<std::pair<double, double>> xy(points.size(), {0.0, 0.0});
  if (points.size() >= 2) xy = Project2d(points);
  std::vector<double> sil(points.size(), 0.0);
  if (model.k >= 2) sil = SilhouetteSamples(points, model.assignment);
  std::ofstream out(path);
  if (!out) throw Error(kStage, "cannot write " + path.string());
  out << "member_id,cluster,x,y,silhouette\n";
  for (std::size_t i = 0; i < points.size(); ++i) {
    out << member_ids[i] << ',' << model.assignment[i] << ',' << FormatDouble(xy[i].first)
        << ',' << FormatDouble(xy[i].second) << ',' << FormatDouble(sil[i]) << '\n';
  }
}

}  // namespace rashens
