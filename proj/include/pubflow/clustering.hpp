#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pubflow/dataset.hpp"

namespace pubflow {

/// Fitted k-means partition of a basin descriptor space.
struct ClusterModel {
  int k = 0;
  Matrix centroids;              // k x d
  std::vector<int> assignments;  // per point, in [0, k)
  double silhouette = 0.0;
  double inertia = 0.0;
  std::vector<double> inertia_history;  // per Lloyd iteration of the winning restart
  std::string representation;
  std::vector<BasinId> basins;   // parallel to assignments when known

  std::vector<std::vector<BasinId>> members() const;  // per-cluster basin lists
};

/// Lloyd's algorithm with k-means++ seeding, best of `restarts` runs by
/// inertia (ties keep the earlier restart). An emptied cluster is re-seeded
/// with the point farthest from its assigned centroid; if re-seeding cannot
/// produce K distinct centroids the fit throws.
ClusterModel kmeans_fit(const Matrix& points, int k, uint64_t seed, int restarts = 10);

/// Mean silhouette over all points (Euclidean distances, singleton clusters
/// score 0). Requires >= 2 non-empty clusters.
double silhouette_score(const Matrix& points, const std::vector<int>& assignments);

struct KSelection {
  int best_k = 0;
  ClusterModel model;
  std::vector<std::pair<int, double>> profile;  // (K, silhouette)
};

/// Fits every K in [k_min, k_max], scores each by silhouette, returns the
/// argmax (ties prefer the smaller K).
KSelection select_k(const Matrix& points, int k_min, int k_max, uint64_t seed,
                    int restarts = 10);

/// Leave-one-cluster-out splits: split c tests on cluster c's members and
/// trains on everything else. Requires the model to carry basin ids.
std::vector<SplitSpec> loco_splits(const ClusterModel& model, const Period& train_period,
                                   const Period& test_period);

}  // namespace pubflow
