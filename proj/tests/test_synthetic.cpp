#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>

#include "pubflow/synthetic.hpp"

using namespace pubflow;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const size_t n = a.size();
  double ma = 0, mb = 0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double vaa = 0, vbb = 0, vab = 0;
  for (size_t i = 0; i < n; ++i) {
    vaa += (a[i] - ma) * (a[i] - ma);
    vbb += (b[i] - mb) * (b[i] - mb);
    vab += (a[i] - ma) * (b[i] - mb);
  }
  return vab / std::sqrt(vaa * vbb);
}

double theta_dist(const ReservoirParams& x, const ReservoirParams& y) {
  // Unit-scaled parameter distance (ranges k: 45, c: 450, e: 0.8).
  const double dk = (x.recession_k - y.recession_k) / 45.0;
  const double dc = (x.soil_capacity - y.soil_capacity) / 450.0;
  const double de = (x.evap_coef - y.evap_coef) / 0.8;
  return std::sqrt(dk * dk + dc * dc + de * de);
}

}  // namespace

TEST_CASE("synthetic fleet: determinism") {
  const auto a = generate_synthetic_fleet(4, 900, 7);
  const auto b = generate_synthetic_fleet(4, 900, 7);
  CHECK(a.basins() == b.basins());
  for (size_t i = 0; i < a.attributes.size(); ++i)
    for (size_t j = 0; j < a.attributes.dim(); ++j)
      CHECK(a.attributes.values[i][j] == b.attributes.values[i][j]);
  for (size_t i = 0; i < a.embeddings.size(); ++i)
    for (size_t j = 0; j < a.embeddings.dim(); ++j)
      CHECK(a.embeddings.values[i][j] == b.embeddings.values[i][j]);
  for (const auto& id : a.basins()) {
    const auto& qa = a.flow_for(id).column("q_mm_day");
    const auto& qb = b.flow_for(id).column("q_mm_day");
    REQUIRE(qa.size() == qb.size());
    for (size_t t = 0; t < qa.size(); ++t) CHECK(qa[t] == qb[t]);
  }
}

TEST_CASE("synthetic fleet: reservoir re-simulation oracle") {
  const uint64_t seed = 11;
  const auto a = generate_synthetic_fleet(3, 1000, seed);
  for (int b = 0; b < 3; ++b) {
    const BasinId id = a.basins()[static_cast<size_t>(b)];
    const ReservoirParams theta = synthetic_params(b, seed);
    // The attribute table's first three columns are the true parameters.
    CHECK(a.attributes.values[static_cast<size_t>(b)][0] == theta.recession_k);
    CHECK(a.attributes.values[static_cast<size_t>(b)][1] == theta.soil_capacity);
    CHECK(a.attributes.values[static_cast<size_t>(b)][2] == theta.evap_coef);

    const auto& prcp = a.forcings_for(id).column("prcp");
    const auto& pet = a.forcings_for(id).column("pet");
    const auto& q = a.flow_for(id).column("q_mm_day");

    // Straight-line re-simulation of the capped reservoir.
    double storage = theta.soil_capacity / 2.0;
    bool clipped = false;
    double ds_sum = 0.0, p_sum = 0.0, et_sum = 0.0, q_sum = 0.0;
    for (size_t t = 0; t < q.size(); ++t) {
      const double out = storage / theta.recession_k;
      CHECK(q[t] == out);
      CHECK(q[t] >= 0.0);
      const double raw = storage + prcp[t] - theta.evap_coef * pet[t] - out;
      const double next = std::clamp(raw, 0.0, theta.soil_capacity);
      if (next != raw) clipped = true;
      if (!clipped) {
        ds_sum = next - theta.soil_capacity / 2.0;
        p_sum += prcp[t];
        et_sum += theta.evap_coef * pet[t];
        q_sum += out;
      }
      CHECK(next <= theta.soil_capacity);
      storage = next;
    }
    // Water balance is exact over any prefix where the clamp never fires.
    CHECK(ds_sum == doctest::Approx(p_sum - et_sum - q_sum).epsilon(1e-9));
  }
}

TEST_CASE("synthetic fleet: closest parameters give the most similar flows") {
  // Majority vote over 25 seeded 3-basin fleets: the pair with the smallest
  // parameter distance should show the highest flow correlation.
  int wins = 0;
  const int trials = 25;
  for (int trial = 0; trial < trials; ++trial) {
    const uint64_t seed = 1000 + static_cast<uint64_t>(trial);
    const auto a = generate_synthetic_fleet(3, 1200, seed);
    std::vector<ReservoirParams> theta;
    for (int b = 0; b < 3; ++b) theta.push_back(synthetic_params(b, seed));
    std::vector<std::vector<double>> q;
    for (const auto& id : a.basins()) q.push_back(a.flow_for(id).column("q_mm_day"));

    const std::array<std::pair<int, int>, 3> pairs = {{{0, 1}, {0, 2}, {1, 2}}};
    int closest = 0, most_correlated = 0;
    double best_d = 1e18, best_r = -2;
    for (int p = 0; p < 3; ++p) {
      const auto [i, j] = pairs[static_cast<size_t>(p)];
      const double d = theta_dist(theta[static_cast<size_t>(i)], theta[static_cast<size_t>(j)]);
      const double r = pearson(q[static_cast<size_t>(i)], q[static_cast<size_t>(j)]);
      if (d < best_d) {
        best_d = d;
        closest = p;
      }
      if (r > best_r) {
        best_r = r;
        most_correlated = p;
      }
    }
    if (closest == most_correlated) ++wins;
  }
  CHECK(wins * 2 > trials);  // strict majority
}

TEST_CASE("synthetic fleet: forcing frames are complete and positive where needed") {
  const auto a = generate_synthetic_fleet(2, 800, 3);
  for (const auto& id : a.basins()) {
    const auto& f = a.forcings_for(id);
    CHECK(f.size() == 800);
    CHECK(f.start_date().to_string() == "1980-01-01");
    for (const auto& col : forcing_columns())
      for (double v : f.column(col)) CHECK(!is_missing(v));
    for (double v : f.column("prcp")) CHECK(v >= 0.0);
    for (double v : f.column("pet")) CHECK(v > 0.0);
  }
  CHECK_THROWS(generate_synthetic_fleet(1, 800, 0));
  CHECK_THROWS(generate_synthetic_fleet(4, 700, 0));
}

TEST_CASE("synthetic fleet: CSV round trip preserves values exactly") {
  namespace fs = std::filesystem;
  const std::string dir = "tmp_synth_rt";
  fs::remove_all(dir);
  const auto a = generate_synthetic_fleet(3, 820, 21);
  write_archive_csv(a, dir);

  ArchivePaths paths;
  paths.attributes = dir + "/attributes.csv";
  paths.embeddings = dir + "/embeddings.csv";
  paths.forcings_dir = dir + "/forcings";
  paths.flow_dir = dir + "/flow";
  paths.basin_list = dir + "/basins.txt";
  const auto b = load_archive(paths);

  CHECK(b.basins() == a.basins());
  for (size_t i = 0; i < a.attributes.size(); ++i)
    for (size_t j = 0; j < a.attributes.dim(); ++j)
      CHECK(b.attributes.values[i][j] == a.attributes.values[i][j]);
  for (const auto& id : a.basins()) {
    const auto& qa = a.flow_for(id).column("q_mm_day");
    const auto& qb = b.flow_for(id).column("q_mm_day");
    for (size_t t = 0; t < qa.size(); ++t) CHECK(qa[t] == qb[t]);
    for (const auto& col : forcing_columns()) {
      const auto& fa = a.forcings_for(id).column(col);
      const auto& fb = b.forcings_for(id).column(col);
      for (size_t t = 0; t < fa.size(); ++t) CHECK(fa[t] == fb[t]);
    }
  }
  fs::remove_all(dir);
}
