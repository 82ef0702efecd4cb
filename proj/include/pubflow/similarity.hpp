#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pubflow/dataset.hpp"

namespace pubflow {

enum class SimilarityMethod { Attributes, Fusion, Aef, Custom };

std::string_view similarity_method_name(SimilarityMethod m);
SimilarityMethod parse_similarity_method(std::string_view name);

/// Pairwise cosine similarities between basins under one representation.
/// Symmetric, unit diagonal, entries clamped to [-1, 1].
struct SimilarityMatrix {
  SimilarityMethod method = SimilarityMethod::Custom;
  std::vector<BasinId> basins;
  Matrix values;  // n x n

  size_t size() const { return basins.size(); }
  size_t index_of(const BasinId& id) const;  // throws when unknown
};

/// s(u, v) = u.v / (|u| |v|), clamped to [-1, 1]. Throws on a zero-norm
/// vector: a degenerate standardized row must not silently rank as 0.
double cosine(std::span<const double> u, std::span<const double> v);

/// Standardizes the table columns (z-score over all rows, population sd)
/// and fills the full pairwise cosine matrix. The method tag comes from the
/// table kind unless overridden.
SimilarityMatrix similarity_matrix(const StaticTable& table,
                                   std::optional<SimilarityMethod> method_override = std::nullopt);

/// Full donor ranking for one target: every other basin ordered by score
/// descending, ties broken by ascending basin id.
struct DonorRanking {
  BasinId target;
  std::vector<std::pair<BasinId, double>> donors;  // length n-1
};

DonorRanking donor_ranking(const SimilarityMatrix& matrix, const BasinId& target);

/// First k donors of the ranking.
std::vector<BasinId> rank_and_select(const SimilarityMatrix& matrix, const BasinId& target, int k);

/// Seeded uniform sample of k basins without replacement from basins minus
/// the target.
std::vector<BasinId> select_random(const std::vector<BasinId>& basins, const BasinId& target,
                                   int k, uint64_t seed);

/// Writes the full matrix (id column + n numeric columns), or a single-target
/// "stripe" of donor_id,score rows in ranking order when `target` is given.
void export_similarity(const SimilarityMatrix& matrix, const std::optional<BasinId>& target,
                       const std::string& path);

/// Reads back a full-matrix export.
SimilarityMatrix import_similarity(const std::string& path);

}  // namespace pubflow
