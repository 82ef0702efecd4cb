#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pubflow {

/// Nash-Sutcliffe efficiency: 1 - sum((obs-sim)^2) / sum((obs-mean(obs))^2).
/// Pairs with a missing observation are dropped. Returns nullopt when fewer
/// than two valid pairs remain or the observations have zero variance.
std::optional<double> nse(std::span<const double> obs, std::span<const double> sim);

struct KgeResult {
  double kge;
  double r;      // Pearson correlation
  double alpha;  // sd(sim) / sd(obs)
  double beta;   // mean(sim) / mean(obs)
};

/// Kling-Gupta efficiency: 1 - sqrt((r-1)^2 + (alpha-1)^2 + (beta-1)^2).
/// nullopt when undefined (zero obs mean/variance, constant sim for r, or
/// fewer than two valid pairs).
std::optional<KgeResult> kge(std::span<const double> obs, std::span<const double> sim);

/// One model realization's aligned (obs, sim) series.
struct ObsSimPairs {
  std::vector<double> obs;
  std::vector<double> sim;
};

/// Distribution of skill scores over bootstrap replicates of a pooled
/// prediction ensemble. Undefined replicates are stored as NaN and counted.
struct BootstrapResult {
  size_t pooled_n = 0;
  size_t replicate_size = 0;  // floor(fraction * pooled_n) draws per replicate
  double fraction = 0.8;
  std::vector<double> nse_reps;
  std::vector<double> kge_reps;
  int nse_undefined = 0;
  int kge_undefined = 0;
};

/// Pools the (obs, sim) pairs of all seed runs (dropping missing-obs pairs),
/// then draws `reps` replicates of floor(fraction * N) pairs with replacement
/// and rescores each. Each replicate's random stream derives from
/// (seed, replicate index), so results are order-independent.
BootstrapResult pool_and_bootstrap(const std::vector<ObsSimPairs>& seed_runs,
                                   double fraction, int reps, uint64_t seed);

struct KsResult {
  double d;
  double p;
};

/// Two-sided two-sample Kolmogorov-Smirnov test. D by a merged sorted sweep;
/// p from the asymptotic Kolmogorov distribution with the small-sample
/// lambda correction. With exact=true (intended for min(n) <= 10) the
/// p-value comes from lattice-path enumeration assuming no ties.
KsResult ks_two_sample(std::span<const double> x, std::span<const double> y, bool exact = false);

/// Sorted (value, cumulative fraction) steps; duplicates collapse to one
/// point carrying the upper fraction.
std::vector<std::pair<double, double>> cdf_points(std::span<const double> values);

/// Median of the finite entries; nullopt when none.
std::optional<double> median_finite(std::vector<double> values);

}  // namespace pubflow
