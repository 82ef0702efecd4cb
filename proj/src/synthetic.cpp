#include "pubflow/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "pubflow/csv.hpp"
#include "pubflow/rng.hpp"

namespace pubflow {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

double seasonal(int day, double phase_day, double base, double amp) {
  return base + amp * std::sin(kTwoPi * (day - phase_day) / 365.25);
}

ReservoirParams draw_params(Rng& rng) {
  ReservoirParams p;
  p.recession_k = rng.uniform(5.0, 50.0);
  p.soil_capacity = rng.uniform(50.0, 500.0);
  p.evap_coef = rng.uniform(0.2, 1.0);
  return p;
}

std::string basin_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08d", 90000000 + index);
  return buf;
}

}  // namespace

ReservoirParams synthetic_params(int index, uint64_t seed) {
  Rng rng(derive_seed(seed, "synth|params|" + std::to_string(index)));
  return draw_params(rng);
}

BasinArchive generate_synthetic_fleet(int n_basins, int n_days, uint64_t seed) {
  if (n_basins < 2) throw std::invalid_argument("synthetic fleet: need >= 2 basins");
  if (n_days < 800) throw std::invalid_argument("synthetic fleet: need >= 800 days");

  const Date start = Date::from_ymd(1980, 1, 1);
  BasinArchive archive;

  // Fleet-wide precipitation regime: seasonal wet-day process with
  // exponential event depths. Basins see this signal with mild jitter.
  Rng regional(derive_seed(seed, "synth|regional"));
  std::vector<double> regional_prcp(static_cast<size_t>(n_days), 0.0);
  for (int t = 0; t < n_days; ++t) {
    const double p_wet = seasonal(t, 100.0, 0.28, 0.10);
    if (regional.unit() < p_wet)
      regional_prcp[static_cast<size_t>(t)] = -8.0 * std::log(1.0 - regional.unit());
  }

  // Fixed linear encoding of the unit-scaled parameters (64 x 3).
  Rng enc_rng(derive_seed(seed, "synth|encoder"));
  std::vector<std::array<double, 3>> encoder(64);
  for (auto& row : encoder)
    for (auto& v : row) v = enc_rng.normal() / std::sqrt(3.0);

  archive.attributes.kind = TableKind::Attributes17;
  archive.attributes.columns = {"recession_k", "soil_capacity", "evap_coef"};
  for (int j = 1; j <= 14; ++j) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "nuis%02d", j);
    archive.attributes.columns.push_back(buf);
  }
  archive.embeddings.kind = TableKind::Aef64;
  for (int j = 0; j < 64; ++j) {
    char buf[8];
    std::snprintf(buf, sizeof buf, "e%02d", j);
    archive.embeddings.columns.push_back(buf);
  }

  for (int b = 0; b < n_basins; ++b) {
    const BasinId id = basin_name(b);
    const ReservoirParams theta = synthetic_params(b, seed);
    Rng rng(derive_seed(seed, "synth|basin|" + std::to_string(b)));

    // Per-basin climate characteristics.
    const double wetness = rng.uniform(0.85, 1.15);
    const double t_mid = rng.uniform(6.0, 14.0);
    const double t_amp = rng.uniform(8.0, 14.0);
    const double t_spread = rng.uniform(3.0, 6.0);
    const double dayl_amp = rng.uniform(1.5, 3.5);
    const double pet_base = rng.uniform(1.2, 2.2);

    std::vector<std::vector<double>> cols(7);
    for (auto& c : cols) c.reserve(static_cast<size_t>(n_days));
    std::vector<double>& prcp = cols[0];
    std::vector<double>& dayl = cols[1];
    std::vector<double>& srad = cols[2];
    std::vector<double>& tmin = cols[3];
    std::vector<double>& tmax = cols[4];
    std::vector<double>& vp = cols[5];
    std::vector<double>& pet = cols[6];

    for (int t = 0; t < n_days; ++t) {
      const double jitter = std::exp(0.25 * rng.normal());
      prcp.push_back(regional_prcp[static_cast<size_t>(t)] * wetness * jitter);
      dayl.push_back(seasonal(t, 80.0, 12.0, dayl_amp));
      srad.push_back(std::max(20.0, seasonal(t, 80.0, 180.0, 90.0) + 10.0 * rng.normal()));
      const double mid = seasonal(t, 110.0, t_mid, t_amp) + 1.5 * rng.normal();
      tmin.push_back(mid - t_spread);
      tmax.push_back(mid + t_spread);
      vp.push_back(std::max(100.0, seasonal(t, 110.0, 650.0, 350.0) + 30.0 * rng.normal()));
      pet.push_back(std::max(0.05, pet_base * (1.0 + 0.9 * std::sin(kTwoPi * (t - 172.0) / 365.25)) +
                                       0.05 * rng.normal()));
    }

    // Capped linear reservoir.
    std::vector<double> q(static_cast<size_t>(n_days));
    double storage = theta.soil_capacity / 2.0;
    for (int t = 0; t < n_days; ++t) {
      const double out = storage / theta.recession_k;
      q[static_cast<size_t>(t)] = out;
      storage = std::clamp(storage + prcp[static_cast<size_t>(t)] -
                               theta.evap_coef * pet[static_cast<size_t>(t)] - out,
                           0.0, theta.soil_capacity);
    }

    archive.forcings.emplace(id, TimeSeriesFrame(start, forcing_columns(), std::move(cols)));
    archive.flow.emplace(id, TimeSeriesFrame(start, {"q_mm_day"}, {std::move(q)}));

    std::vector<double> attrs = {theta.recession_k, theta.soil_capacity, theta.evap_coef};
    for (int j = 0; j < 14; ++j) attrs.push_back(rng.normal());
    archive.attributes.basins.push_back(id);
    archive.attributes.values.push_back(std::move(attrs));

    const std::array<double, 3> unit = {(theta.recession_k - 5.0) / 45.0,
                                        (theta.soil_capacity - 50.0) / 450.0,
                                        (theta.evap_coef - 0.2) / 0.8};
    std::vector<double> emb(64);
    for (int j = 0; j < 64; ++j) {
      double v = 0.0;
      for (int k = 0; k < 3; ++k) v += encoder[static_cast<size_t>(j)][static_cast<size_t>(k)] * unit[static_cast<size_t>(k)];
      emb[static_cast<size_t>(j)] = v + 0.02 * rng.normal();
    }
    archive.embeddings.basins.push_back(id);
    archive.embeddings.values.push_back(std::move(emb));
  }
  return archive;
}

void write_archive_csv(const BasinArchive& archive, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir + "/forcings");
  fs::create_directories(dir + "/flow");

  auto write_table = [&](const StaticTable& t, const std::string& name) {
    csv::Writer w(dir + "/" + name);
    std::vector<std::string> head = {"basin_id"};
    head.insert(head.end(), t.columns.begin(), t.columns.end());
    w.row(head);
    for (size_t i = 0; i < t.size(); ++i) {
      std::vector<std::string> cells = {t.basins[i]};
      for (double v : t.values[i]) cells.push_back(csv::format_double(v));
      w.row(cells);
    }
    w.commit();
  };
  write_table(archive.attributes, "attributes.csv");
  write_table(archive.embeddings, "embeddings.csv");

  auto write_frame = [&](const TimeSeriesFrame& f, const std::string& path) {
    csv::Writer w(path);
    std::vector<std::string> head = {"date"};
    for (const auto& n : f.column_names()) head.push_back(n);
    w.row(head);
    for (size_t i = 0; i < f.size(); ++i) {
      std::vector<std::string> cells = {f.date_at(i).to_string()};
      for (const auto& n : f.column_names()) {
        const double v = f.column(n)[i];
        cells.push_back(is_missing(v) ? "" : csv::format_double(v));
      }
      w.row(cells);
    }
    w.commit();
  };
  for (const auto& [id, f] : archive.forcings) write_frame(f, dir + "/forcings/" + id + ".csv");
  for (const auto& [id, f] : archive.flow) write_frame(f, dir + "/flow/" + id + ".csv");

  csv::Writer basins(dir + "/basins.txt");
  for (const auto& id : archive.basins()) basins.raw_line(id);
  basins.commit();
}

}  // namespace pubflow
