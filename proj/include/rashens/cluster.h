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

#ifndef RASHENS_CLUSTER_H_
#define RASHENS_CLUSTER_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <vector>

#include <nlohmann/json.hpp>

namespace rashens {

// Rows are explanation vectors; all rows must have the same length.
using Points = std::vector<std::vector<double>>;

// Silhouette of one (k, restart) run evaluated by SelectK.
struct KScore {
  int k = 0;
  int restart = 0;
  double silhouette = 0.0;
};

// Cluster ids are 0..k-1. `assignment` and `clusteroids` index positions in
// the input Points; callers that pass members in ascending id order get the
// lowest-id tie rule for free.
struct ClusterModel {
  int k = 0;
  Points centroids;
  std::vector<int> assignment;
  double silhouette = std::numeric_limits<double>::quiet_NaN();
  std::vector<int> clusteroids;
  // Within-cluster sum of squares of the final partition.
  double inertia = 0.0;
  int iterations = 0;
  std::vector<KScore> evaluated;

  std::vector<int> ClusterSizes() const;
};

struct KMeansOptions {
  int max_iterations = 300;
  // When set, receives the within-cluster sum of squares after every
  // centroid update.
  std::vector<double>* inertia_trace = nullptr;
};

// k-means++ seeding followed by Lloyd iterations. Identical rows are merged
// into weighted points, which leaves the objective unchanged. Clusteroids
// are filled in; silhouette is left unset.
ClusterModel KMeans(const Points& points, int k, uint64_t seed,
                    const KMeansOptions& options = {});

std::size_t CountDistinct(const Points& points);

// Per-point silhouette; points in singleton clusters score 0.
std::vector<double> SilhouetteSamples(const Points& points,
                                      const std::vector<int>& assignment);
double Silhouette(const Points& points, const std::vector<int>& assignment);

struct SelectKOptions {
  int restarts = 5;
  // Silhouette is exact up to this many points and estimated on a seeded
  // subsample beyond it.
  std::size_t silhouette_sample = 4000;
};

ClusterModel SelectK(const Points& points, int k_min, int k_max, uint64_t seed,
                     const SelectKOptions& options = {});

// [2, min(25, floor(sqrt(n)))], clamped to the distinct-point count.
std::pair<int, int> DefaultKRange(const Points& points);

// Position of the point nearest each centroid; ties go to the lower position.
std::vector<int> Clusteroids(const ClusterModel& model, const Points& points);

// Index of the nearest centroid; ties go to the lowest cluster id.
int NearestCentroid(const Points& centroids, const std::vector<double>& point);

// PCA onto the top two principal axes of the centered data. Each axis is
// signed so that its largest-magnitude loading is positive.
std::vector<std::pair<double, double>> Project2d(const Points& points);

nlohmann::json ToJson(const ClusterModel& model);
ClusterModel ClusterModelFromJson(const nlohmann::json& j);

// CSV with columns member_id, cluster, x, y, silhouette.
void WriteClusterReport(const std::filesystem::path& path,
                        const std::vector<int>& member_ids,
                        const ClusterModel& model, const Points& points);

}  // namespace rashens

#endif  // RASHENS_CLUSTER_H_
