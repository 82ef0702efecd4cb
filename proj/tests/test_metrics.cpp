#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>

#include "pubflow/dataset.hpp"
#include "pubflow/metrics.hpp"
#include "pubflow/rng.hpp"

using namespace pubflow;

namespace {

// Brute-force KS oracle: evaluate both ECDFs at every pooled sample point,
// tracking the gap as an integer numerator over nx*ny.
double brute_ks_d(std::vector<double> x, std::vector<double> y) {
  std::vector<double> points = x;
  points.insert(points.end(), y.begin(), y.end());
  const auto nx = static_cast<long long>(x.size()), ny = static_cast<long long>(y.size());
  long long best = 0;
  for (double t : points) {
    long long cx = 0, cy = 0;
    for (double v : x) cx += (v <= t);
    for (double v : y) cy += (v <= t);
    best = std::max(best, std::llabs(cx * ny - cy * nx));
  }
  return static_cast<double>(best) / static_cast<double>(nx * ny);
}

bool same_bits(double a, double b) {
  return std::bit_cast<uint64_t>(a) == std::bit_cast<uint64_t>(b);
}

}  // namespace

TEST_CASE("nse: oracle values") {
  const std::vector<double> obs = {1.0, 2.0, 3.0};
  CHECK(*nse(obs, obs) == 1.0);

  const std::vector<double> clim = {2.0, 2.0, 2.0};
  CHECK(std::fabs(*nse(obs, clim)) <= 1e-12);  // climatology baseline

  const std::vector<double> ones = {1.0, 1.0, 1.0};
  CHECK(*nse(obs, ones) == doctest::Approx(-1.5).epsilon(1e-12));

  CHECK(!nse(ones, obs).has_value());  // zero obs variance
  CHECK(!nse(std::vector<double>{1.0}, std::vector<double>{1.0}).has_value());
  CHECK_THROWS(nse(obs, std::vector<double>{1.0, 1.0}));
}

TEST_CASE("nse: missing observations are dropped") {
  const std::vector<double> obs = {1.0, kMissing, 2.0, 3.0, kMissing};
  const std::vector<double> sim = {1.0, 99.0, 1.0, 1.0, -99.0};
  // Valid pairs are (1,1),(2,1),(3,1) -> same as the hand case above.
  CHECK(*nse(obs, sim) == doctest::Approx(-1.5).epsilon(1e-12));
}

TEST_CASE("kge: component oracle values") {
  const std::vector<double> obs = {1.0, 2.0, 3.0};
  const auto perfect = kge(obs, obs);
  REQUIRE(perfect.has_value());
  CHECK(perfect->kge == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(perfect->r == doctest::Approx(1.0));
  CHECK(perfect->alpha == doctest::Approx(1.0));
  CHECK(perfect->beta == doctest::Approx(1.0));

  const std::vector<double> twice = {2.0, 4.0, 6.0};
  const auto k2 = kge(obs, twice);
  REQUIRE(k2.has_value());
  CHECK(k2->r == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(k2->alpha == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(k2->beta == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(k2->kge == doctest::Approx(1.0 - std::sqrt(2.0)).epsilon(1e-9));

  const std::vector<double> rev = {3.0, 2.0, 1.0};
  const auto kr = kge(obs, rev);
  REQUIRE(kr.has_value());
  CHECK(kr->r == doctest::Approx(-1.0));
  CHECK(kr->alpha == doctest::Approx(1.0));
  CHECK(kr->beta == doctest::Approx(1.0));
  CHECK(kr->kge == doctest::Approx(-1.0).epsilon(1e-9));

  const std::vector<double> zero_mean = {-1.0, 0.0, 1.0};
  CHECK(!kge(zero_mean, obs).has_value());
}

TEST_CASE("nse/kge: invariant under pair order permutation") {
  Rng rng(17);
  std::vector<double> obs(40), sim(40);
  for (size_t i = 0; i < 40; ++i) {
    obs[i] = rng.uniform(0, 10);
    sim[i] = obs[i] + rng.normal();
  }
  const double n0 = *nse(obs, sim);
  const double k0 = kge(obs, sim)->kge;
  std::vector<size_t> idx(40);
  for (size_t i = 0; i < 40; ++i) idx[i] = i;
  rng.shuffle(idx);
  std::vector<double> obs_p(40), sim_p(40);
  for (size_t i = 0; i < 40; ++i) {
    obs_p[i] = obs[idx[i]];
    sim_p[i] = sim[idx[i]];
  }
  CHECK(*nse(obs_p, sim_p) == doctest::Approx(n0).epsilon(1e-12));
  CHECK(kge(obs_p, sim_p)->kge == doctest::Approx(k0).epsilon(1e-12));
}

TEST_CASE("pool_and_bootstrap: replicate size, determinism, perfect predictions") {
  ObsSimPairs run;
  for (int i = 0; i < 10; ++i) {
    run.obs.push_back(static_cast<double>(i));
    run.sim.push_back(static_cast<double>(i));
  }
  const auto br = pool_and_bootstrap({run}, 0.8, 100, 99);
  CHECK(br.pooled_n == 10);
  CHECK(br.replicate_size == 8);  // floor(0.8 * 10)
  CHECK(br.nse_reps.size() == 100);
  CHECK(br.kge_reps.size() == 100);
  int undefined = 0;
  for (double v : br.nse_reps) {
    if (std::isnan(v))
      ++undefined;
    else
      CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  CHECK(undefined == br.nse_undefined);  // a replicate may draw a constant obs sample

  const auto again = pool_and_bootstrap({run}, 0.8, 100, 99);
  for (size_t i = 0; i < 100; ++i) {
    CHECK(same_bits(br.nse_reps[i], again.nse_reps[i]));
    CHECK(same_bits(br.kge_reps[i], again.kge_reps[i]));
  }
}

TEST_CASE("pool_and_bootstrap: pools across seed runs and drops missing obs") {
  ObsSimPairs a, b;
  for (int i = 0; i < 4; ++i) {
    a.obs.push_back(i);
    a.sim.push_back(i + 0.5);
  }
  b.obs = {kMissing, 1.0, 2.0};
  b.sim = {0.0, 1.5, 2.5};
  const auto br = pool_and_bootstrap({a, b}, 0.8, 10, 1);
  CHECK(br.pooled_n == 6);  // 4 + 2 valid pairs
  CHECK(br.replicate_size == 4);

  CHECK_THROWS(pool_and_bootstrap({}, 0.8, 10, 1));
  ObsSimPairs tiny;
  tiny.obs = {1.0, 2.0};
  tiny.sim = {1.0, 2.0};
  CHECK_THROWS(pool_and_bootstrap({tiny}, 0.8, 10, 1));  // pooled N < 5
}

TEST_CASE("pool_and_bootstrap: replicate mean approaches the pooled score") {
  Rng rng(5);
  ObsSimPairs run;
  for (int i = 0; i < 300; ++i) {
    const double o = rng.uniform(0, 10);
    run.obs.push_back(o);
    run.sim.push_back(o + 0.8 * rng.normal());
  }
  const double pooled = *nse(run.obs, run.sim);
  const auto br = pool_and_bootstrap({run}, 0.8, 2000, 123);
  double mean = 0;
  int n = 0;
  for (double v : br.nse_reps)
    if (std::isfinite(v)) {
      mean += v;
      ++n;
    }
  mean /= n;
  CHECK(std::fabs(mean - pooled) < 0.05);
}

TEST_CASE("ks_two_sample: oracle values") {
  const std::vector<double> x = {1.0, 2.0, 3.0};
  CHECK(ks_two_sample(x, x).d == 0.0);
  CHECK(ks_two_sample(x, x).p == 1.0);

  const std::vector<double> lo = {0.0, 1.0}, hi = {2.0, 3.0};
  CHECK(ks_two_sample(lo, hi).d == 1.0);

  const std::vector<double> y = {2.0, 3.0, 4.0};
  CHECK(ks_two_sample(x, y).d == 1.0 / 3.0);  // exact by integer sweep

  CHECK_THROWS(ks_two_sample(std::vector<double>{}, x));
}

TEST_CASE("ks_two_sample: symmetric and equal to the brute-force oracle") {
  Rng rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const size_t nx = 1 + rng.below(50), ny = 1 + rng.below(50);
    std::vector<double> x(nx), y(ny);
    for (auto& v : x) v = rng.uniform(-3, 3);
    for (auto& v : y) v = rng.uniform(-3, 3);
    if (trial % 4 == 0 && ny > 1) y[0] = x[0];  // inject ties across samples
    const auto r = ks_two_sample(x, y);
    CHECK(r.d == brute_ks_d(x, y));
    CHECK(r.d >= 0.0);
    CHECK(r.d <= 1.0);
    CHECK(r.p >= 0.0);
    CHECK(r.p <= 1.0);
    const auto rs = ks_two_sample(y, x);
    CHECK(rs.d == r.d);
    CHECK(rs.p == r.p);
  }
}

TEST_CASE("ks_two_sample: exact small-sample p-value") {
  // For tiny samples the lattice enumeration gives the exact null tail.
  const std::vector<double> x = {0.1, 0.7}, y = {0.4, 0.9};
  const auto r = ks_two_sample(x, y, true);
  CHECK(r.d == 0.5);
  // All C(4,2)=6 orderings: D=0.5 in 4 of them, D=1 in 2 -> P(D >= 0.5) = 1.
  CHECK(r.p == doctest::Approx(1.0));

  const std::vector<double> a = {1.0, 2.0}, b = {3.0, 4.0};
  const auto r2 = ks_two_sample(a, b, true);
  CHECK(r2.d == 1.0);
  // Only the ordering xxyy has D=1; with both orientations 2/6.
  CHECK(r2.p == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("cdf_points: sort-and-count oracle") {
  const std::vector<double> v = {3.0, 1.0, 2.0};
  const auto pts = cdf_points(v);
  REQUIRE(pts.size() == 3);
  CHECK(pts[0] == std::pair{1.0, 1.0 / 3.0});
  CHECK(pts[1] == std::pair{2.0, 2.0 / 3.0});
  CHECK(pts[2] == std::pair{3.0, 1.0});

  const auto single = cdf_points(std::vector<double>{5.5});
  REQUIRE(single.size() == 1);
  CHECK(single[0] == std::pair{5.5, 1.0});

  const auto dup = cdf_points(std::vector<double>{1.0, 1.0, 2.0, 2.0});
  REQUIRE(dup.size() == 2);
  CHECK(dup[0] == std::pair{1.0, 0.5});
  CHECK(dup[1] == std::pair{2.0, 1.0});

  CHECK_THROWS(cdf_points(std::vector<double>{}));
}

TEST_CASE("median_finite") {
  CHECK(*median_finite({3.0, 1.0, 2.0}) == 2.0);
  CHECK(*median_finite({4.0, 1.0, 2.0, 3.0}) == 2.5);
  CHECK(*median_finite({1.0, kMissing, 3.0}) == 2.0);
  CHECK(!median_finite({kMissing}).has_value());
}
