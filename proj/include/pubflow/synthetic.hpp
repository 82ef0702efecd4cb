#pragma once

#include <cstdint>
#include <string>

#include "pubflow/dataset.hpp"

namespace pubflow {

/// Ground-truth reservoir parameters of a synthetic basin.
struct ReservoirParams {
  double recession_k;    // days, [5, 50]
  double soil_capacity;  // mm, [50, 500]
  double evap_coef;      // [0.2, 1.0]
};

/// Generates a deterministic fleet of synthetic basins for verification runs.
///
/// Each basin draws reservoir parameters from the seeded generator and shares
/// a fleet-wide precipitation regime with per-basin perturbations, so basins
/// with close parameters produce similar hydrographs. Flow comes from a
/// capped linear reservoir:
///   Q_t = S_t / k,   S_{t+1} = clamp(S_t + P_t - e*PET_t - Q_t, 0, c),
///   S_0 = c / 2.
/// The attribute table holds the three true parameters plus 14 nuisance
/// columns; the embedding table is a fixed seeded 64-dim linear encoding of
/// the unit-scaled parameters plus small noise. Dates start 1980-01-01.
BasinArchive generate_synthetic_fleet(int n_basins, int n_days, uint64_t seed);

/// True parameters of basin `index` under the same seed (bypasses the table).
ReservoirParams synthetic_params(int index, uint64_t seed);

/// Writes an archive to `dir` in the on-disk CSV layout
/// (attributes.csv, embeddings.csv, forcings/, flow/, basins.txt).
void write_archive_csv(const BasinArchive& archive, const std::string& dir);

}  // namespace pubflow
