#pragma once

#include <span>
#include <string>
#include <vector>

#include "pubflow/dataset.hpp"

namespace pubflow {

/// Plug-in mutual information in nats between two real columns.
///
/// Each column is discretized into `bins` equal-frequency bins (edges from
/// sample quantiles, ties assigned to the lower bin); the joint histogram is
/// evaluated with the convention 0*log(0/q) = 0. The binning depends only on
/// ranks, so the estimate is invariant under strictly monotone transforms of
/// tie-free data.
double mutual_information(std::span<const double> x, std::span<const double> y, int bins = 16);

/// Attribute-by-embedding MI matrix (rows = attribute columns, columns =
/// embedding dimensions), values in nats.
struct MiMatrix {
  std::vector<std::string> row_names;
  std::vector<std::string> col_names;
  Matrix values;
};

/// Computes MI between every attribute column and every embedding dimension.
/// Both tables must list basins in the same order. Columns are standardized
/// first (a no-op for the rank-based binning, kept for the stated pipeline).
MiMatrix mi_matrix(const StaticTable& attrs, const StaticTable& embs, int bins = 16);

/// Writes `attribute,<e00..>` rows with 6-decimal values.
void export_mi_matrix(const MiMatrix& m, const std::string& path);

}  // namespace pubflow
