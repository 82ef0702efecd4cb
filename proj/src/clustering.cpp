#include "pubflow/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "pubflow/rng.hpp"

namespace pubflow {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct LloydRun {
  Matrix centroids;
  std::vector<int> assignments;
  double inertia = std::numeric_limits<double>::infinity();
  std::vector<double> inertia_history;
  bool ok = false;
};

Matrix kmeanspp_seed(const Matrix& points, int k, Rng& rng) {
  const size_t n = points.size();
  Matrix centroids;
  centroids.push_back(points[static_cast<size_t>(rng.below(n))]);
  std::vector<double> d2(n);
  while (static_cast<int>(centroids.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, sq_dist(points[i], c));
      d2[i] = best;
      total += best;
    }
    size_t pick;
    if (total <= 0.0) {
      pick = static_cast<size_t>(rng.below(n));  // all mass on existing centroids
    } else {
      const double target = rng.unit() * total;
      double acc = 0.0;
      pick = n - 1;
      for (size_t i = 0; i < n; ++i) {
        acc += d2[i];
        if (acc >= target) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

LloydRun lloyd(const Matrix& points, int k, uint64_t seed, int max_iter) {
  const size_t n = points.size();
  Rng rng(seed);
  LloydRun run;
  run.centroids = kmeanspp_seed(points, k, rng);
  run.assignments.assign(n, -1);

  for (int iter = 0; iter < max_iter; ++iter) {
    // Assignment step.
    bool changed = false;
    double inertia = 0.0;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(points[i], run.centroids[0]);
      for (int c = 1; c < k; ++c) {
        const double d = sq_dist(points[i], run.centroids[static_cast<size_t>(c)]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (run.assignments[i] != best) changed = true;
      run.assignments[i] = best;
      inertia += bd;
    }
    run.inertia_history.push_back(inertia);
    run.inertia = inertia;
    if (!changed && iter > 0) break;

    // Update step, re-seeding emptied clusters with the farthest point.
    std::vector<size_t> counts(static_cast<size_t>(k), 0);
    Matrix sums(static_cast<size_t>(k), std::vector<double>(points.front().size(), 0.0));
    for (size_t i = 0; i < n; ++i) {
      const auto c = static_cast<size_t>(run.assignments[i]);
      ++counts[c];
      for (size_t j = 0; j < points[i].size(); ++j) sums[c][j] += points[i][j];
    }
    for (int c = 0; c < k; ++c) {
      const auto cu = static_cast<size_t>(c);
      if (counts[cu] == 0) {
        double far_d = -1.0;
        size_t far_i = 0;
        for (size_t i = 0; i < n; ++i) {
          const double d =
              sq_dist(points[i], run.centroids[static_cast<size_t>(run.assignments[i])]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        if (far_d <= 0.0) return run;  // fewer distinct points than clusters
        run.centroids[cu] = points[far_i];
        changed = true;
      } else {
        for (size_t j = 0; j < sums[cu].size(); ++j)
          run.centroids[cu][j] = sums[cu][j] / static_cast<double>(counts[cu]);
      }
    }
  }

  // Reject a run that still has an empty cluster.
  std::vector<bool> used(static_cast<size_t>(k), false);
  for (int a : run.assignments) used[static_cast<size_t>(a)] = true;
  run.ok = std::all_of(used.begin(), used.end(), [](bool b) { return b; });
  return run;
}

}  // namespace

std::vector<std::vector<BasinId>> ClusterModel::members() const {
  std::vector<std::vector<BasinId>> out(static_cast<size_t>(k));
  for (size_t i = 0; i < basins.size(); ++i)
    out[static_cast<size_t>(assignments[i])].push_back(basins[i]);
  return out;
}

ClusterModel kmeans_fit(const Matrix& points, int k, uint64_t seed, int restarts) {
  const int n = static_cast<int>(points.size());
  if (k < 2 || k > n) throw std::invalid_argument("kmeans_fit: K out of range [2, n]");
  if (restarts < 1) throw std::invalid_argument("kmeans_fit: need >= 1 restart");

  LloydRun best;
  bool have = false;
  for (int r = 0; r < restarts; ++r) {
    LloydRun run = lloyd(points, k, derive_seed(seed, "kmeans|restart" + std::to_string(r)), 300);
    if (!run.ok) continue;
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }
  if (!have)
    throw std::runtime_error(
        "kmeans_fit: empty-cluster re-seeding exhausted (fewer distinct points than K?)");

  ClusterModel m;
  m.k = k;
  m.centroids = std::move(best.centroids);
  m.assignments = std::move(best.assignments);
  m.inertia = best.inertia;
  m.inertia_history = std::move(best.inertia_history);
  m.silhouette = silhouette_score(points, m.assignments);
  return m;
}

double silhouette_score(const Matrix& points, const std::vector<int>& assignments) {
  const size_t n = points.size();
  if (assignments.size() != n) throw std::invalid_argument("silhouette: size mismatch");
  int k = 0;
  for (int a : assignments) k = std::max(k, a + 1);
  std::vector<size_t> counts(static_cast<size_t>(k), 0);
  for (int a : assignments) ++counts[static_cast<size_t>(a)];
  size_t nonempty = 0;
  for (size_t c : counts) nonempty += (c > 0);
  if (nonempty < 2) throw std::invalid_argument("silhouette: need >= 2 non-empty clusters");

  double total = 0.0;
  std::vector<double> mean_dist(static_cast<size_t>(k));
  for (size_t i = 0; i < n; ++i) {
    std::fill(mean_dist.begin(), mean_dist.end(), 0.0);
    for (size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      mean_dist[static_cast<size_t>(assignments[j])] += std::sqrt(sq_dist(points[i], points[j]));
    }
    const auto own = static_cast<size_t>(assignments[i]);
    if (counts[own] <= 1) continue;  // singleton scores 0
    const double a = mean_dist[own] / static_cast<double>(counts[own] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (size_t c = 0; c < static_cast<size_t>(k); ++c) {
      if (c == own || counts[c] == 0) continue;
      b = std::min(b, mean_dist[c] / static_cast<double>(counts[c]));
    }
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

KSelection select_k(const Matrix& points, int k_min, int k_max, uint64_t seed, int restarts) {
  if (k_min < 2) throw std::invalid_argument("select_k: k_min must be >= 2");
  if (k_max < k_min) throw std::invalid_argument("select_k: k_max < k_min");
  if (k_max > static_cast<int>(points.size()))
    throw std::invalid_argument("select_k: k_max exceeds point count");

  KSelection sel;
  for (int k = k_min; k <= k_max; ++k) {
    ClusterModel m = kmeans_fit(points, k, derive_seed(seed, "select_k|" + std::to_string(k)),
                                restarts);
    sel.profile.emplace_back(k, m.silhouette);
    if (sel.best_k == 0 || m.silhouette > sel.model.silhouette) {
      sel.best_k = k;
      sel.model = std::move(m);
    }
  }
  return sel;
}

std::vector<SplitSpec> loco_splits(const ClusterModel& model, const Period& train_period,
                                   const Period& test_period) {
  if (model.k < 2) throw std::invalid_argument("loco_splits: need >= 2 clusters");
  if (model.basins.size() != model.assignments.size() || model.basins.empty())
    throw std::invalid_argument("loco_splits: model carries no basin ids");
  const auto groups = model.members();
  std::vector<SplitSpec> splits;
  for (int c = 0; c < model.k; ++c) {
    SplitSpec s;
    s.test_basins = groups[static_cast<size_t>(c)];
    for (int o = 0; o < model.k; ++o)
      if (o != c)
        s.train_basins.insert(s.train_basins.end(), groups[static_cast<size_t>(o)].begin(),
                              groups[static_cast<size_t>(o)].end());
    s.train_period = train_period;
    s.test_period = test_period;
    s.label = "loco-" + model.representation + "-c" + std::to_string(c);
    splits.push_back(std::move(s));
  }
  return splits;
}

}  // namespace pubflow
