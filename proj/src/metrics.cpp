#include "pubflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <stdexcept>
#include <string>

#include "pubflow/rng.hpp"

namespace pubflow {

namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

struct ValidPairs {
  std::vector<double> obs;
  std::vector<double> sim;
};

ValidPairs drop_missing(std::span<const double> obs, std::span<const double> sim) {
  if (obs.size() != sim.size())
    throw std::invalid_argument("score: obs/sim length mismatch");
  ValidPairs v;
  v.obs.reserve(obs.size());
  v.sim.reserve(obs.size());
  for (size_t i = 0; i < obs.size(); ++i) {
    if (std::isnan(obs[i])) continue;
    v.obs.push_back(obs[i]);
    v.sim.push_back(sim[i]);
  }
  return v;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

std::optional<double> nse(std::span<const double> obs, std::span<const double> sim) {
  const ValidPairs v = drop_missing(obs, sim);
  const size_t n = v.obs.size();
  if (n < 2) return std::nullopt;
  const double obar = mean_of(v.obs);
  double sse = 0.0, svar = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double e = v.obs[i] - v.sim[i];
    const double d = v.obs[i] - obar;
    sse += e * e;
    svar += d * d;
  }
  if (svar <= 0.0) return std::nullopt;
  return 1.0 - sse / svar;
}

std::optional<KgeResult> kge(std::span<const double> obs, std::span<const double> sim) {
  const ValidPairs v = drop_missing(obs, sim);
  const size_t n = v.obs.size();
  if (n < 2) return std::nullopt;
  const double mo = mean_of(v.obs), ms = mean_of(v.sim);
  double voo = 0.0, vss = 0.0, vos = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d_o = v.obs[i] - mo, ds = v.sim[i] - ms;
    voo += d_o * d_o;
    vss += ds * ds;
    vos += d_o * ds;
  }
  if (voo <= 0.0 || mo == 0.0) return std::nullopt;
  if (vss <= 0.0) return std::nullopt;  // correlation undefined for constant sim
  KgeResult r;
  r.r = vos / std::sqrt(voo * vss);
  r.alpha = std::sqrt(vss / voo);
  r.beta = ms / mo;
  r.kge = 1.0 - std::sqrt((r.r - 1.0) * (r.r - 1.0) + (r.alpha - 1.0) * (r.alpha - 1.0) +
                          (r.beta - 1.0) * (r.beta - 1.0));
  return r;
}

BootstrapResult pool_and_bootstrap(const std::vector<ObsSimPairs>& seed_runs,
                                   double fraction, int reps, uint64_t seed) {
  if (seed_runs.empty()) throw std::invalid_argument("bootstrap: no seed runs");
  if (!(fraction > 0.0 && fraction <= 1.0))
    throw std::invalid_argument("bootstrap: fraction out of (0, 1]");
  if (reps < 1) throw std::invalid_argument("bootstrap: reps must be >= 1");

  std::vector<double> pobs, psim;
  for (const auto& run : seed_runs) {
    if (run.obs.size() != run.sim.size())
      throw std::invalid_argument("bootstrap: obs/sim length mismatch");
    for (size_t i = 0; i < run.obs.size(); ++i) {
      if (std::isnan(run.obs[i])) continue;
      pobs.push_back(run.obs[i]);
      psim.push_back(run.sim[i]);
    }
  }
  const size_t n = pobs.size();
  if (n < 5) throw std::invalid_argument("bootstrap: pooled sample too small (< 5)");
  const size_t draw = static_cast<size_t>(std::floor(fraction * static_cast<double>(n)));

  BootstrapResult out;
  out.pooled_n = n;
  out.replicate_size = draw;
  out.fraction = fraction;
  out.nse_reps.assign(static_cast<size_t>(reps), kNan);
  out.kge_reps.assign(static_cast<size_t>(reps), kNan);

  std::vector<double> robs(draw), rsim(draw);
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(derive_seed(seed, "bootstrap|rep" + std::to_string(rep)));
    for (size_t i = 0; i < draw; ++i) {
      const size_t j = static_cast<size_t>(rng.below(n));
      robs[i] = pobs[j];
      rsim[i] = psim[j];
    }
    if (auto s = nse(robs, rsim))
      out.nse_reps[static_cast<size_t>(rep)] = *s;
    else
      ++out.nse_undefined;
    if (auto s = kge(robs, rsim))
      out.kge_reps[static_cast<size_t>(rep)] = s->kge;
    else
      ++out.kge_undefined;
  }
  return out;
}

namespace {

/// Asymptotic two-sided KS survival function Q(lambda).
double kolmogorov_q(double lambda) {
  if (lambda <= 0.0) return 1.0;
  double sum = 0.0;
  double sign = 1.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * lambda * lambda);
    sum += sign * term;
    if (term < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

/// Exact P(D >= d_obs) by lattice-path counting (assumes continuous data).
/// Gaps are compared as the integer numerators |i*ny - j*nx|.
double ks_exact_p(int64_t nx, int64_t ny, int64_t d_num) {
  // Count monotone paths (0,0) -> (nx,ny) whose ECDF gap stays strictly
  // below the observed one; those orderings have D < d_obs.
  const auto unx = static_cast<size_t>(nx), uny = static_cast<size_t>(ny);
  std::vector<std::vector<double>> count(unx + 1, std::vector<double>(uny + 1, 0.0));
  count[0][0] = 1.0;
  for (size_t i = 0; i <= unx; ++i)
    for (size_t j = 0; j <= uny; ++j) {
      if (i == 0 && j == 0) continue;
      const int64_t gap = std::llabs(static_cast<int64_t>(i) * ny - static_cast<int64_t>(j) * nx);
      if (gap >= d_num) {
        count[i][j] = 0.0;
        continue;
      }
      double c = 0.0;
      if (i > 0) c += count[i - 1][j];
      if (j > 0) c += count[i][j - 1];
      count[i][j] = c;
    }
  // Total path count = C(nx+ny, nx), computed incrementally to stay in range.
  double total = 1.0;
  for (int64_t i = 1; i <= nx; ++i)
    total *= static_cast<double>(ny + i) / static_cast<double>(i);
  return std::clamp(1.0 - count[unx][uny] / total, 0.0, 1.0);
}

}  // namespace

KsResult ks_two_sample(std::span<const double> x, std::span<const double> y, bool exact) {
  if (x.empty() || y.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::vector<double> xs(x.begin(), x.end()), ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());

  // Merged sorted sweep over the pooled sample points. The running gap is
  // tracked as the integer numerator of |i/nx - j/ny| so D is exact.
  const auto nx = static_cast<int64_t>(xs.size()), ny = static_cast<int64_t>(ys.size());
  int64_t d_num = 0;
  size_t i = 0, j = 0;
  while (i < xs.size() && j < ys.size()) {
    const double t = std::min(xs[i], ys[j]);
    while (i < xs.size() && xs[i] <= t) ++i;
    while (j < ys.size() && ys[j] <= t) ++j;
    d_num = std::max<int64_t>(d_num, std::llabs(static_cast<int64_t>(i) * ny -
                                                static_cast<int64_t>(j) * nx));
  }

  KsResult r;
  r.d = static_cast<double>(d_num) / static_cast<double>(nx * ny);
  if (exact) {
    r.p = ks_exact_p(nx, ny, d_num);
  } else {
    const double dnx = static_cast<double>(nx), dny = static_cast<double>(ny);
    const double ne = dnx * dny / (dnx + dny);
    const double sqrt_ne = std::sqrt(ne);
    r.p = kolmogorov_q((sqrt_ne + 0.12 + 0.11 / sqrt_ne) * r.d);
  }
  return r;
}

std::vector<std::pair<double, double>> cdf_points(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("cdf_points: empty sample");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  std::vector<std::pair<double, double>> out;
  for (size_t i = 0; i < v.size(); ++i) {
    const double frac = static_cast<double>(i + 1) / n;
    if (!out.empty() && out.back().first == v[i])
      out.back().second = frac;  // duplicate value keeps the upper fraction
    else
      out.emplace_back(v[i], frac);
  }
  return out;
}

std::optional<double> median_finite(std::vector<double> values) {
  values.erase(std::remove_if(values.begin(), values.end(),
                              [](double v) { return !std::isfinite(v); }),
               values.end());
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace pubflow
